//! The `.certproof` file: a JSON document holding the encoded query, an
//! optional echo of the network and property it came from, and the proof
//! tree. Every scalar is an exact rational string so the checker never
//! re-parses floats.
//!
//! ```text
//! { "version": "certproof/1",
//!   "query": { "variables", "equations": [{"terms": [[var, "c"]], "rhs"}],
//!              "lower", "upper", "relus": [{"b", "f"}], "inputs", "outputs" },
//!   "network"?, "property"?,
//!   "tree": node }
//! node = { "split": {"relu", "phase"} | null, "ground_bound_updates": [{"var", "which", "value"}],
//!          "added_equations", "lemmas", "leaf": {"kind": "var", "var"}
//!          | {"kind": "farkas", "vector"} | null, "children": [node] }
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::{Network, Property};
use crate::lp_core::{Equation, Query, ReluPair, Side, VarId};
use crate::scalar::{ExtendedScalar, Rational};
use crate::search::{GroundUpdate, NodeBody, ProofNode, ProofTree, Split};
use crate::simplex::Contradiction;
use crate::tightening::{Lemma, ReluRule};

pub const VERSION: &str = "certproof/1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProofFormatError {
    #[error("malformed proof at {path}: {message}")]
    Malformed { path: String, message: String },
}

fn malformed(path: impl Into<String>, message: impl Into<String>) -> ProofFormatError {
    ProofFormatError::Malformed {
        path: path.into(),
        message: message.into(),
    }
}

/// A proof tree together with the inputs it was produced from.
#[derive(Debug, Clone, PartialEq)]
pub struct ProofFile {
    pub tree: ProofTree<Rational>,
    pub network: Option<Network>,
    pub property: Option<Property>,
}

impl ProofFile {
    pub fn new(tree: ProofTree<Rational>) -> Self {
        Self {
            tree,
            network: None,
            property: None,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireFile {
    version: String,
    query: WireQuery,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    network: Option<Network>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    property: Option<Property>,
    tree: WireNode,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireQuery {
    variables: Vec<String>,
    equations: Vec<WireEquation>,
    lower: Vec<ExtendedScalar<Rational>>,
    upper: Vec<ExtendedScalar<Rational>>,
    relus: Vec<ReluPair>,
    inputs: Vec<VarId>,
    outputs: Vec<VarId>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireEquation {
    terms: Vec<(VarId, Rational)>,
    rhs: Rational,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireLemma {
    relu: usize,
    affected_var: VarId,
    which: Side,
    new_bound: Rational,
    rule: ReluRule,
    antecedent_var: VarId,
    antecedent_which: Side,
    antecedent_explanation: Vec<Rational>,
}

#[derive(Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "lowercase")]
enum LeafKind {
    Var,
    Farkas,
}

// A plain struct rather than a tagged enum so that parse errors inside the
// vector keep their exact location.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireLeaf {
    kind: LeafKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    var: Option<VarId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vector: Option<Vec<Rational>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireNode {
    split: Option<Split>,
    ground_bound_updates: Vec<GroundUpdate<Rational>>,
    added_equations: Vec<WireEquation>,
    lemmas: Vec<WireLemma>,
    leaf: Option<WireLeaf>,
    children: Vec<WireNode>,
}

fn eq_out(e: &Equation<Rational>) -> WireEquation {
    WireEquation {
        terms: e.terms.clone(),
        rhs: e.rhs.clone(),
    }
}

fn eq_in(e: WireEquation) -> Equation<Rational> {
    Equation::new(e.terms, e.rhs)
}

fn node_out(n: &ProofNode<Rational>) -> WireNode {
    let (leaf, children) = match &n.body {
        NodeBody::Leaf(Contradiction::VarSymbol(v)) => (
            Some(WireLeaf {
                kind: LeafKind::Var,
                var: Some(*v),
                vector: None,
            }),
            Vec::new(),
        ),
        NodeBody::Leaf(Contradiction::Farkas(w)) => (
            Some(WireLeaf {
                kind: LeafKind::Farkas,
                var: None,
                vector: Some(w.clone()),
            }),
            Vec::new(),
        ),
        NodeBody::Internal(c) => (None, c.iter().map(node_out).collect()),
    };
    WireNode {
        split: n.split,
        ground_bound_updates: n.ground_bound_updates.clone(),
        added_equations: n.added_equations.iter().map(eq_out).collect(),
        lemmas: n
            .lemmas
            .iter()
            .map(|l| WireLemma {
                relu: l.relu,
                affected_var: l.affected_var,
                which: l.which,
                new_bound: l.new_bound.clone(),
                rule: l.rule,
                antecedent_var: l.antecedent_var,
                antecedent_which: l.antecedent_which,
                antecedent_explanation: l.antecedent_explanation.clone(),
            })
            .collect(),
        leaf,
        children,
    }
}

fn node_in(n: WireNode, path: &str) -> Result<ProofNode<Rational>, ProofFormatError> {
    let body = match (n.leaf, n.children.is_empty()) {
        (Some(_), false) => return Err(malformed(path, "a node cannot have both a leaf and children")),
        (Some(leaf), true) => match (leaf.kind, leaf.var, leaf.vector) {
            (LeafKind::Var, Some(v), None) => NodeBody::Leaf(Contradiction::VarSymbol(v)),
            (LeafKind::Farkas, None, Some(w)) => NodeBody::Leaf(Contradiction::Farkas(w)),
            (LeafKind::Var, ..) => return Err(malformed(format!("{path}.leaf"), "a var leaf needs exactly a \"var\" field")),
            (LeafKind::Farkas, ..) => return Err(malformed(format!("{path}.leaf"), "a farkas leaf needs exactly a \"vector\" field")),
        },
        (None, _) => NodeBody::Internal(
            n.children
                .into_iter()
                .enumerate()
                .map(|(k, c)| node_in(c, &format!("{path}.children[{k}]")))
                .collect::<Result<_, _>>()?,
        ),
    };
    Ok(ProofNode {
        split: n.split,
        ground_bound_updates: n.ground_bound_updates,
        added_equations: n.added_equations.into_iter().map(eq_in).collect(),
        lemmas: n
            .lemmas
            .into_iter()
            .map(|l| Lemma {
                relu: l.relu,
                affected_var: l.affected_var,
                which: l.which,
                new_bound: l.new_bound,
                rule: l.rule,
                antecedent_var: l.antecedent_var,
                antecedent_which: l.antecedent_which,
                antecedent_explanation: l.antecedent_explanation,
            })
            .collect(),
        body,
    })
}

fn query_out(q: &Query<Rational>) -> WireQuery {
    WireQuery {
        variables: q.var_names.clone(),
        equations: q.equations.iter().map(eq_out).collect(),
        lower: q.lower.clone(),
        upper: q.upper.clone(),
        relus: q.relus.clone(),
        inputs: q.inputs.clone(),
        outputs: q.outputs.clone(),
    }
}

fn query_in(q: WireQuery) -> Query<Rational> {
    Query {
        var_names: q.variables,
        equations: q.equations.into_iter().map(eq_in).collect(),
        lower: q.lower,
        upper: q.upper,
        relus: q.relus,
        inputs: q.inputs,
        outputs: q.outputs,
    }
}

fn wire(file: &ProofFile) -> WireFile {
    WireFile {
        version: VERSION.to_string(),
        query: query_out(&file.tree.query),
        network: file.network.clone(),
        property: file.property.clone(),
        tree: node_out(&file.tree.root),
    }
}

/// Pretty-printed JSON with a fixed key order.
pub fn serialize(file: &ProofFile) -> String {
    serde_json::to_string_pretty(&wire(file)).expect("proof trees always serialize")
}

/// Compact single-line JSON, same content as [`serialize`].
pub fn serialize_compact(file: &ProofFile) -> String {
    serde_json::to_string(&wire(file)).expect("proof trees always serialize")
}

pub fn deserialize(text: &str) -> Result<ProofFile, ProofFormatError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let w: WireFile = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        malformed(path, e.into_inner().to_string())
    })?;
    de.end().map_err(|e| malformed(".", e.to_string()))?;
    if w.version != VERSION {
        return Err(malformed("version", format!("unsupported version {:?}", w.version)));
    }
    let query = query_in(w.query);
    query.validate().map_err(|m| malformed("query", m))?;
    let root = node_in(w.tree, "tree")?;
    Ok(ProofFile {
        tree: ProofTree { query, root },
        network: w.network,
        property: w.property,
    })
}

pub fn deserialize_bytes(bytes: &[u8]) -> Result<ProofFile, ProofFormatError> {
    let text = std::str::from_utf8(bytes).map_err(|e| malformed(".", format!("not UTF-8: {e}")))?;
    deserialize(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::rat;
    use crate::search::Phase;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_query() -> Query<Rational> {
        Query {
            var_names: vec!["a".into(), "b".into(), "f".into()],
            equations: vec![Equation::new(vec![(VarId(0), rat("1")), (VarId(1), rat("-1"))], rat("1/2"))],
            lower: vec![ExtendedScalar::NegInf, ExtendedScalar::Finite(rat("-1")), ExtendedScalar::Finite(rat("0"))],
            upper: vec![ExtendedScalar::PosInf, ExtendedScalar::Finite(rat("3")), ExtendedScalar::Finite(rat("7/3"))],
            relus: vec![ReluPair { b: VarId(1), f: VarId(2) }],
            inputs: vec![VarId(0)],
            outputs: vec![VarId(2)],
        }
    }

    fn round_trip(file: &ProofFile) {
        let text = serialize(file);
        assert_eq!(&deserialize(&text).unwrap(), file);
        assert_eq!(&deserialize(&serialize_compact(file)).unwrap(), file);
        assert_eq!(serialize(&deserialize(&text).unwrap()), text);
    }

    #[test]
    fn single_leaf_round_trips() {
        let root = ProofNode::leaf(Contradiction::VarSymbol(VarId(2)));
        round_trip(&ProofFile::new(ProofTree { query: small_query(), root }));
    }

    #[test]
    fn golden_shape_round_trips() {
        let farkas = |v: &[&str]| ProofNode::leaf(Contradiction::Farkas(v.iter().map(|s| rat(s)).collect()));
        let mut left = farkas(&["-1", "0", "0"]);
        left.split = Some(Split { relu: 0, phase: Phase::Inactive });
        let mut deep = farkas(&["-2", "1", "0", "-2", "0"]);
        deep.split = Some(Split { relu: 0, phase: Phase::Active });
        deep.lemmas.push(Lemma {
            relu: 0,
            affected_var: VarId(2),
            which: Side::Lower,
            new_bound: rat("1/3"),
            rule: ReluRule::R2,
            antecedent_var: VarId(1),
            antecedent_which: Side::Lower,
            antecedent_explanation: vec![rat("1"), rat("-5/7")],
        });
        let root = ProofNode {
            split: None,
            ground_bound_updates: vec![],
            added_equations: vec![],
            lemmas: vec![],
            body: NodeBody::Internal(vec![left, deep]),
        };
        let file = ProofFile::new(ProofTree { query: small_query(), root });
        round_trip(&file);
        let text = serialize(&file);
        assert!(text.contains("\"-5/7\""));
        assert!(text.contains("\"+inf\""));
    }

    fn random_scalar(rng: &mut ChaCha8Rng) -> Rational {
        Rational::new(rng.gen_range(-1_000_000..=1_000_000), rng.gen_range(1..=1_000_000))
    }

    fn random_node(rng: &mut ChaCha8Rng, depth: usize) -> ProofNode<Rational> {
        let vec = |rng: &mut ChaCha8Rng, n: usize| (0..n).map(|_| random_scalar(rng)).collect::<Vec<_>>();
        let body = if depth == 0 || rng.gen_bool(0.3) {
            if rng.gen_bool(0.3) {
                NodeBody::Leaf(Contradiction::VarSymbol(VarId(rng.gen_range(0..50))))
            } else {
                let n = rng.gen_range(0..6);
                NodeBody::Leaf(Contradiction::Farkas(vec(rng, n)))
            }
        } else {
            NodeBody::Internal((0..rng.gen_range(0..=3)).map(|_| random_node(rng, depth - 1)).collect())
        };
        let side = |rng: &mut ChaCha8Rng| if rng.gen_bool(0.5) { Side::Lower } else { Side::Upper };
        ProofNode {
            split: rng.gen_bool(0.7).then(|| Split {
                relu: rng.gen_range(0..10),
                phase: if rng.gen_bool(0.5) { Phase::Active } else { Phase::Inactive },
            }),
            ground_bound_updates: (0..rng.gen_range(0..4))
                .map(|_| GroundUpdate {
                    var: VarId(rng.gen_range(0..20)),
                    which: side(rng),
                    value: random_scalar(rng),
                })
                .collect(),
            added_equations: (0..rng.gen_range(0..2))
                .map(|_| {
                    let terms = (0..rng.gen_range(0..4)).map(|_| (VarId(rng.gen_range(0..20)), random_scalar(rng))).collect();
                    Equation::new(terms, random_scalar(rng))
                })
                .collect(),
            lemmas: (0..rng.gen_range(0..3))
                .map(|_| {
                    let n = rng.gen_range(0..5);
                    Lemma {
                        relu: rng.gen_range(0..10),
                        affected_var: VarId(rng.gen_range(0..20)),
                        which: side(rng),
                        new_bound: random_scalar(rng),
                        rule: ReluRule::ALL[rng.gen_range(0..5)],
                        antecedent_var: VarId(rng.gen_range(0..20)),
                        antecedent_which: side(rng),
                        antecedent_explanation: vec(rng, n),
                    }
                })
                .collect(),
            body,
        }
    }

    #[test]
    fn random_trees_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let root = random_node(&mut rng, 4);
            round_trip(&ProofFile::new(ProofTree { query: small_query(), root }));
        }
    }

    #[test]
    fn corrupted_inputs_are_rejected_with_a_path() {
        let root = ProofNode::leaf(Contradiction::Farkas(vec![rat("3/11")]));
        let text = serialize(&ProofFile::new(ProofTree { query: small_query(), root }));
        for cut in (0..text.len()).step_by(7) {
            assert!(deserialize(&text[..cut]).is_err());
        }
        let bad = text.replace("\"3/11\"", "\"3/0\"");
        let Err(ProofFormatError::Malformed { path, .. }) = deserialize(&bad) else { panic!() };
        assert_eq!(path, "tree.leaf.vector[0]");
        let bad = text.replace("certproof/1", "certproof/9");
        assert!(deserialize(&bad).is_err());
        let bad = text.replace("\"farkas\"", "\"mystery\"");
        assert!(deserialize(&bad).is_err());
        assert!(deserialize_bytes(&[0xff, 0xfe]).is_err());
    }

    #[test]
    fn unknown_rule_is_malformed() {
        let mut root = ProofNode::leaf(Contradiction::VarSymbol(VarId(0)));
        root.lemmas.push(Lemma {
            relu: 0,
            affected_var: VarId(2),
            which: Side::Upper,
            new_bound: rat("0"),
            rule: ReluRule::R4,
            antecedent_var: VarId(1),
            antecedent_which: Side::Upper,
            antecedent_explanation: vec![rat("0")],
        });
        let text = serialize(&ProofFile::new(ProofTree { query: small_query(), root }));
        let bad = text.replace("\"R4\"", "\"R9\"");
        let Err(ProofFormatError::Malformed { path, .. }) = deserialize(&bad) else { panic!() };
        assert_eq!(path, "tree.lemmas[0].rule");
    }

    #[test]
    fn random_byte_noise_never_panics() {
        let root = ProofNode::leaf(Contradiction::Farkas(vec![rat("-1"), rat("0")]));
        let text = serialize(&ProofFile::new(ProofTree { query: small_query(), root })).into_bytes();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let mut b = text.clone();
            for _ in 0..rng.gen_range(1..4) {
                let k = rng.gen_range(0..b.len());
                b[k] = rng.gen();
            }
            let _ = deserialize_bytes(&b);
        }
    }
}
