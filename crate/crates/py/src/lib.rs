//! Python bindings. Scalars cross the boundary as strings ("p/q"), and any
//! Python value whose `str()` parses (int, Fraction, decimal float) is
//! accepted as input.

use std::fs;

use certrelu::checker::{check as run_check, repair as run_repair, CheckOptions, CheckReport};
use certrelu::frontend::{self, encode};
use certrelu::proof_format::{self, ProofFile};
use certrelu::search::{verify as run_verify, Outcome, SearchOptions};
use certrelu::simplex::EngineOptions;
use certrelu::{ExtendedScalar, Float, Rational, Scalar};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn scalar(obj: &Bound<'_, PyAny>) -> PyResult<Rational> {
    let text = obj.str()?.to_string();
    Rational::parse(&text).map_err(value_err)
}

fn texts(values: &[Rational]) -> Vec<String> {
    values.iter().map(|v| v.to_string()).collect()
}

#[pyclass(name = "Network", module = "certrelu_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyNetwork(frontend::Network);

#[pymethods]
impl PyNetwork {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        frontend::parse_network(text).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Self::from_json(&fs::read_to_string(path).map_err(value_err)?)
    }

    #[getter]
    fn layers(&self) -> Vec<usize> {
        self.0.layers.clone()
    }

    fn evaluate(&self, x: Vec<Bound<'_, PyAny>>) -> PyResult<Vec<String>> {
        let x = x.iter().map(scalar).collect::<PyResult<Vec<_>>>()?;
        frontend::evaluate(&self.0, &x).map(|y| texts(&y)).map_err(value_err)
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    fn __repr__(&self) -> String {
        format!("Network(layers={:?})", self.0.layers)
    }
}

#[pyclass(name = "Property", module = "certrelu_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyProperty(frontend::Property);

#[pymethods]
impl PyProperty {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        frontend::parse_property(text).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Self::from_json(&fs::read_to_string(path).map_err(value_err)?)
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }
}

/// The encoded LP with ReLU pairs.
#[pyclass(name = "Query", module = "certrelu_py", frozen)]
struct PyQuery(certrelu::Query<Rational>);

#[pymethods]
impl PyQuery {
    #[staticmethod]
    fn encode(net: &PyNetwork, prop: &PyProperty) -> PyResult<Self> {
        encode(&net.0, &prop.0).map(Self).map_err(value_err)
    }

    #[getter]
    fn var_names(&self) -> Vec<String> {
        self.0.var_names.clone()
    }

    /// Each equation as `([(var, coefficient)], rhs)`.
    #[getter]
    fn equations(&self) -> Vec<(Vec<(usize, String)>, String)> {
        self.0
            .equations
            .iter()
            .map(|e| (e.terms.iter().map(|(v, c)| (v.0, c.to_string())).collect(), e.rhs.to_string()))
            .collect()
    }

    #[getter]
    fn bounds(&self) -> Vec<(String, String)> {
        self.0.lower.iter().zip(&self.0.upper).map(|(l, u)| (l.encode(), u.encode())).collect()
    }

    #[getter]
    fn relus(&self) -> Vec<(usize, usize)> {
        self.0.relus.iter().map(|r| (r.b.0, r.f.0)).collect()
    }
}

#[pyclass(name = "CheckReport", module = "certrelu_py", frozen)]
struct PyCheckReport(CheckReport);

#[pymethods]
impl PyCheckReport {
    #[getter]
    fn accepted(&self) -> bool {
        self.0.accepted
    }

    /// `(node path, kind, reason)` per problem found.
    #[getter]
    fn issues(&self) -> Vec<(String, String, String)> {
        self.0.issues.iter().map(|i| (i.path.to_string(), i.kind.to_string(), i.reason.clone())).collect()
    }

    /// `(node path, status, certificate upper bound or None)` per leaf.
    #[getter]
    fn leaves(&self) -> Vec<(String, String, Option<String>)> {
        self.0
            .leaves
            .iter()
            .map(|l| {
                let status = serde_json::to_value(l.status).ok().and_then(|v| v.as_str().map(str::to_string));
                (l.path.to_string(), status.unwrap_or_default(), l.upper.clone())
            })
            .collect()
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    fn __bool__(&self) -> bool {
        self.0.accepted
    }
}

#[pyclass(name = "Proof", module = "certrelu_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyProof(ProofFile);

#[pymethods]
impl PyProof {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        proof_format::deserialize(text).map(Self).map_err(value_err)
    }

    fn to_json(&self) -> String {
        proof_format::serialize(&self.0)
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.0.tree.root.node_count()
    }

    #[getter]
    fn leaf_count(&self) -> usize {
        self.0.tree.root.leaf_count()
    }

    /// Checks the proof, against `net`/`prop` when given, otherwise against
    /// the echo stored in the proof.
    #[pyo3(signature = (net=None, prop=None, jobs=1))]
    fn check(&self, net: Option<&PyNetwork>, prop: Option<&PyProperty>, jobs: usize) -> PyResult<PyCheckReport> {
        let expected = match (net, prop) {
            (Some(n), Some(p)) => Some(encode(&n.0, &p.0).map_err(value_err)?),
            (None, None) => None,
            _ => return Err(PyValueError::new_err("pass both net and prop, or neither")),
        };
        Ok(PyCheckReport(run_check(&self.0, &CheckOptions { expected, jobs })))
    }

    /// Drops failing lemmas and re-solves failing leaves exactly.
    #[pyo3(signature = (max_iters=1_000_000))]
    fn repair(&self, max_iters: u64) -> (PyProof, PyCheckReport) {
        let (fixed, report, _) = run_repair(&self.0, &CheckOptions::default(), max_iters);
        (PyProof(fixed), PyCheckReport(report))
    }
}

#[pyclass(name = "VerifyResult", module = "certrelu_py", frozen)]
struct PyVerifyResult {
    #[pyo3(get)]
    verdict: String,
    #[pyo3(get)]
    witness: Option<Vec<String>>,
    #[pyo3(get)]
    proof: Option<PyProof>,
    #[pyo3(get)]
    nodes: usize,
}

#[pymethods]
impl PyVerifyResult {
    fn __repr__(&self) -> String {
        format!("VerifyResult(verdict={:?}, nodes={})", self.verdict, self.nodes)
    }
}

fn verify_in<S: Scalar>(net: &PyNetwork, prop: &PyProperty, jobs: usize, max_iters: u64) -> PyResult<PyVerifyResult> {
    let query = encode(&net.0, &prop.0).map_err(value_err)?;
    let opts = SearchOptions::<S> {
        engine: EngineOptions {
            max_iters,
            ..EngineOptions::default()
        },
        jobs: jobs.max(1),
        ..SearchOptions::default()
    };
    let (outcome, stats) = run_verify(&query, &opts).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(match outcome {
        Outcome::Sat { inputs, .. } => PyVerifyResult {
            verdict: "sat".into(),
            witness: Some(inputs.iter().map(|v| v.to_rational().to_string()).collect()),
            proof: None,
            nodes: stats.nodes,
        },
        Outcome::Unsat { tree } => PyVerifyResult {
            verdict: "unsat".into(),
            witness: None,
            proof: tree.map(|t| {
                PyProof(ProofFile {
                    tree: t.to_exact(),
                    network: Some(net.0.clone()),
                    property: Some(prop.0.clone()),
                })
            }),
            nodes: stats.nodes,
        },
    })
}

/// Decides `prop` for `net`. `mode` is "exact" or "float".
#[pyfunction]
#[pyo3(signature = (net, prop, mode="exact", jobs=1, max_iters=1_000_000))]
fn verify(py: Python<'_>, net: &PyNetwork, prop: &PyProperty, mode: &str, jobs: usize, max_iters: u64) -> PyResult<PyVerifyResult> {
    match mode {
        "exact" => py.detach(|| verify_in::<Rational>(net, prop, jobs, max_iters)),
        "float" => py.detach(|| verify_in::<Float>(net, prop, jobs, max_iters)),
        other => Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
    }
}

#[pyfunction]
fn evaluate(net: &PyNetwork, x: Vec<Bound<'_, PyAny>>) -> PyResult<Vec<String>> {
    net.evaluate(x)
}

/// Parses a scalar or bound literal and returns its canonical text.
#[pyfunction]
fn normalize_scalar(text: &str) -> PyResult<String> {
    ExtendedScalar::<Rational>::parse(text).map(|v| v.encode()).map_err(value_err)
}

#[pymodule]
fn certrelu_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyProperty>()?;
    m.add_class::<PyQuery>()?;
    m.add_class::<PyProof>()?;
    m.add_class::<PyCheckReport>()?;
    m.add_class::<PyVerifyResult>()?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_scalar, m)?)?;
    m.add("PROOF_VERSION", proof_format::VERSION)?;
    Ok(())
}
