//! Networks, properties, forward evaluation and the LP-plus-ReLU encoding
//! of a verification query.
//!
//! Variables are laid out as the inputs, then for each hidden layer its
//! `b` variables followed by its `f` variables, then the outputs. Each
//! affine neuron `b = Σ w·prev + p` becomes the equation
//! `Σ w·prev - b = -p`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp_core::{Equation, Query, ReluPair, VarId};
use crate::scalar::{ExtendedScalar, Rational, Scalar};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrontendError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

fn parse_error(e: serde_json::Error) -> FrontendError {
    FrontendError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

/// Feed-forward ReLU network. `weights[i]` is the `s_{i+1} × s_i` matrix
/// from layer `i` to layer `i + 1`; hidden layers apply ReLU, the last
/// layer is affine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Network {
    pub layers: Vec<usize>,
    pub weights: Vec<Vec<Vec<Rational>>>,
    pub biases: Vec<Vec<Rational>>,
}

impl Network {
    pub fn new(layers: Vec<usize>, weights: Vec<Vec<Vec<Rational>>>, biases: Vec<Vec<Rational>>) -> Result<Self, FrontendError> {
        let net = Self { layers, weights, biases };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<(), FrontendError> {
        let shape = |m: String| Err(FrontendError::ShapeMismatch(m));
        if self.layers.len() < 2 {
            return shape("a network needs an input and an output layer".into());
        }
        if self.layers.contains(&0) {
            return shape("layer sizes must be positive".into());
        }
        let k = self.layers.len() - 1;
        if self.weights.len() != k || self.biases.len() != k {
            return shape(format!("expected {k} weight matrices and bias vectors"));
        }
        for i in 0..k {
            let (rows, cols) = (self.layers[i + 1], self.layers[i]);
            if self.weights[i].len() != rows || self.weights[i].iter().any(|r| r.len() != cols) {
                return shape(format!("weight matrix {i} must be {rows}x{cols}"));
            }
            if self.biases[i].len() != rows {
                return shape(format!("bias vector {i} must have length {rows}"));
            }
        }
        Ok(())
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.layers.last().unwrap()
    }

    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 2
    }

    pub fn n_relus(&self) -> usize {
        self.layers[1..self.layers.len() - 1].iter().sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serializes")
    }
}

/// Lower and upper bound of one variable.
pub type Interval = (ExtendedScalar<Rational>, ExtendedScalar<Rational>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeuronBound {
    pub name: String,
    #[serde(default = "neg_inf")]
    pub lower: ExtendedScalar<Rational>,
    #[serde(default = "pos_inf")]
    pub upper: ExtendedScalar<Rational>,
}

fn neg_inf() -> ExtendedScalar<Rational> {
    ExtendedScalar::NegInf
}

fn pos_inf() -> ExtendedScalar<Rational> {
    ExtendedScalar::PosInf
}

/// Input and output boxes plus optional bounds on named neurons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Property {
    pub input: Vec<Interval>,
    pub output: Vec<Interval>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub neurons: Vec<NeuronBound>,
}

impl Property {
    pub fn validate(&self) -> Result<(), FrontendError> {
        let boxes = self.input.iter().map(|b| ("input", b)).chain(self.output.iter().map(|b| ("output", b)));
        for (k, (kind, (lo, hi))) in boxes.enumerate() {
            check_interval(&format!("{kind} {k}"), lo, hi)?;
        }
        for nb in &self.neurons {
            check_interval(&nb.name, &nb.lower, &nb.upper)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("property serializes")
    }

    /// Whether `x` and `y` lie in the input and output boxes.
    pub fn contains(&self, x: &[Rational], y: &[Rational]) -> bool {
        let inside = |b: &[Interval], v: &[Rational]| {
            b.len() == v.len()
                && b.iter().zip(v).all(|((lo, hi), v)| {
                    lo.cmp_scalar(v, 0.0) != std::cmp::Ordering::Greater && hi.cmp_scalar(v, 0.0) != std::cmp::Ordering::Less
                })
        };
        inside(&self.input, x) && inside(&self.output, y)
    }
}

fn check_interval(what: &str, lo: &ExtendedScalar<Rational>, hi: &ExtendedScalar<Rational>) -> Result<(), FrontendError> {
    if lo.cmp_exact(hi) == std::cmp::Ordering::Greater || *lo == ExtendedScalar::PosInf || *hi == ExtendedScalar::NegInf {
        return Err(FrontendError::InvariantViolation(format!("{what}: lower {lo} exceeds upper {hi}")));
    }
    Ok(())
}

pub fn parse_network(text: &str) -> Result<Network, FrontendError> {
    let net: Network = serde_json::from_str(text).map_err(parse_error)?;
    net.validate()?;
    Ok(net)
}

pub fn parse_property(text: &str) -> Result<Property, FrontendError> {
    let prop: Property = serde_json::from_str(text).map_err(parse_error)?;
    prop.validate()?;
    Ok(prop)
}

/// Neuron values of a forward pass: `b` and `f` per hidden layer, and the
/// outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub b: Vec<Vec<Rational>>,
    pub f: Vec<Vec<Rational>>,
    pub output: Vec<Rational>,
}

pub fn forward(net: &Network, x: &[Rational]) -> Result<Trace, FrontendError> {
    if x.len() != net.n_inputs() {
        return Err(FrontendError::ShapeMismatch(format!(
            "input has {} entries, network expects {}",
            x.len(),
            net.n_inputs()
        )));
    }
    let mut prev = x.to_vec();
    let mut trace = Trace {
        b: Vec::new(),
        f: Vec::new(),
        output: Vec::new(),
    };
    for (i, (w, p)) in net.weights.iter().zip(&net.biases).enumerate() {
        let z: Vec<Rational> = w
            .iter()
            .zip(p)
            .map(|(row, bias)| row.iter().zip(&prev).fold(bias.clone(), |acc, (a, v)| &acc + &(a * v)))
            .collect();
        if i + 1 == net.weights.len() {
            trace.output = z;
        } else {
            let f: Vec<Rational> = z.iter().map(|v| if v.is_positive() { v.clone() } else { Rational::zero() }).collect();
            trace.b.push(z);
            prev = f.clone();
            trace.f.push(f);
        }
    }
    Ok(trace)
}

pub fn evaluate(net: &Network, x: &[Rational]) -> Result<Vec<Rational>, FrontendError> {
    forward(net, x).map(|t| t.output)
}

/// Variable layout of an encoded network.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub inputs: Vec<VarId>,
    pub b: Vec<Vec<VarId>>,
    pub f: Vec<Vec<VarId>>,
    pub outputs: Vec<VarId>,
    pub names: Vec<String>,
}

pub fn layout(net: &Network) -> Layout {
    let mut names = Vec::new();
    let next = |name: String, names: &mut Vec<String>| {
        names.push(name);
        VarId(names.len() - 1)
    };
    let inputs = (0..net.n_inputs()).map(|j| next(format!("x{j}"), &mut names)).collect();
    let mut b = Vec::new();
    let mut f = Vec::new();
    for k in 1..=net.hidden_layers() {
        b.push((0..net.layers[k]).map(|j| next(format!("b{k}_{j}"), &mut names)).collect());
        f.push((0..net.layers[k]).map(|j| next(format!("f{k}_{j}"), &mut names)).collect());
    }
    let outputs = (0..net.n_outputs()).map(|j| next(format!("y{j}"), &mut names)).collect();
    Layout {
        inputs,
        b,
        f,
        outputs,
        names,
    }
}

/// Full variable assignment induced by a forward pass from `x`.
pub fn forward_assignment(net: &Network, x: &[Rational]) -> Result<Vec<Rational>, FrontendError> {
    let t = forward(net, x)?;
    let mut out = x.to_vec();
    for (b, f) in t.b.iter().zip(&t.f) {
        out.extend(b.iter().cloned());
        out.extend(f.iter().cloned());
    }
    out.extend(t.output);
    Ok(out)
}

/// Encodes `∃x. N(x) = y ∧ P(x, y)` as equations, bounds and ReLU pairs.
/// Every `f` gets the lower bound `0` unless a tighter one is supplied.
pub fn encode(net: &Network, prop: &Property) -> Result<Query<Rational>, FrontendError> {
    net.validate()?;
    prop.validate()?;
    if prop.input.len() != net.n_inputs() || prop.output.len() != net.n_outputs() {
        return Err(FrontendError::ShapeMismatch(format!(
            "property has {} inputs and {} outputs, network {} and {}",
            prop.input.len(),
            prop.output.len(),
            net.n_inputs(),
            net.n_outputs()
        )));
    }
    let lay = layout(net);
    let n = lay.names.len();
    let mut lower = vec![ExtendedScalar::NegInf; n];
    let mut upper = vec![ExtendedScalar::PosInf; n];
    for (v, (lo, hi)) in lay.inputs.iter().zip(&prop.input).chain(lay.outputs.iter().zip(&prop.output)) {
        lower[v.0] = lo.clone();
        upper[v.0] = hi.clone();
    }
    for f in lay.f.iter().flatten() {
        lower[f.0] = ExtendedScalar::Finite(Rational::zero());
    }
    for nb in &prop.neurons {
        let v = lay
            .names
            .iter()
            .position(|name| *name == nb.name)
            .map(VarId)
            .ok_or_else(|| FrontendError::ShapeMismatch(format!("unknown neuron {:?}", nb.name)))?;
        if nb.lower.cmp_exact(&lower[v.0]) == std::cmp::Ordering::Greater {
            lower[v.0] = nb.lower.clone();
        }
        if nb.upper.cmp_exact(&upper[v.0]) == std::cmp::Ordering::Less {
            upper[v.0] = nb.upper.clone();
        }
    }
    let mut equations = Vec::new();
    let mut prev = lay.inputs.clone();
    for (i, (w, p)) in net.weights.iter().zip(&net.biases).enumerate() {
        let heads = if i < lay.b.len() { &lay.b[i] } else { &lay.outputs };
        for (j, head) in heads.iter().enumerate() {
            let mut terms: Vec<(VarId, Rational)> = prev
                .iter()
                .zip(&w[j])
                .filter(|(_, c)| !c.is_zero())
                .map(|(v, c)| (*v, c.clone()))
                .collect();
            terms.push((*head, -Rational::one()));
            equations.push(Equation::new(terms, -&p[j]));
        }
        if i < lay.f.len() {
            prev = lay.f[i].clone();
        }
    }
    let relus = lay
        .b
        .iter()
        .flatten()
        .zip(lay.f.iter().flatten())
        .map(|(b, f)| ReluPair { b: *b, f: *f })
        .collect();
    let query = Query {
        var_names: lay.names,
        equations,
        lower,
        upper,
        relus,
        inputs: lay.inputs,
        outputs: lay.outputs,
    };
    query.validate().map_err(FrontendError::InvariantViolation)?;
    Ok(query)
}
