//! ReLU case splitting on top of the Simplex engine, producing a proof tree
//! whose leaves carry contradictions.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp_core::{Equation, Query, ReluPair, Side, VarId};
use crate::scalar::{Rational, Scalar};
use crate::simplex::{Contradiction, Engine, EngineError, EngineOptions, EngineStats, Verdict};
use crate::tightening::{Lemma, TightenObserver};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Active,
    Inactive,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Active => "active",
            Phase::Inactive => "inactive",
        })
    }
}

/// A ReLU constraint with its phase along the current path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReluConstraint {
    pub index: usize,
    pub pair: ReluPair,
    pub phase: Option<Phase>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Split {
    pub relu: usize,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroundUpdate<S> {
    pub var: VarId,
    pub which: Side,
    pub value: S,
}

/// Ground facts a split contributes: new equations and bound updates.
pub fn split_facts<S: Scalar>(relu: ReluPair, phase: Phase) -> (Vec<Equation<S>>, Vec<GroundUpdate<S>>) {
    let up = |var, which| GroundUpdate {
        var,
        which,
        value: S::zero(),
    };
    match phase {
        Phase::Active => (
            vec![Equation::new(vec![(relu.b, S::one()), (relu.f, S::one().neg())], S::zero())],
            vec![up(relu.b, Side::Lower)],
        ),
        Phase::Inactive => (
            Vec::new(),
            vec![up(relu.b, Side::Upper), up(relu.f, Side::Lower), up(relu.f, Side::Upper)],
        ),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeBody<S> {
    /// Children in exploration order; their splits fix the same ReLU.
    Internal(Vec<ProofNode<S>>),
    Leaf(Contradiction<S>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProofNode<S> {
    pub split: Option<Split>,
    pub ground_bound_updates: Vec<GroundUpdate<S>>,
    pub added_equations: Vec<Equation<S>>,
    pub lemmas: Vec<Lemma<S>>,
    pub body: NodeBody<S>,
}

impl<S: Scalar> ProofNode<S> {
    pub fn leaf(contradiction: Contradiction<S>) -> Self {
        Self {
            split: None,
            ground_bound_updates: Vec::new(),
            added_equations: Vec::new(),
            lemmas: Vec::new(),
            body: NodeBody::Leaf(contradiction),
        }
    }

    pub fn children(&self) -> &[ProofNode<S>] {
        match &self.body {
            NodeBody::Internal(c) => c,
            NodeBody::Leaf(_) => &[],
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children().iter().map(ProofNode::node_count).sum::<usize>()
    }

    pub fn leaf_count(&self) -> usize {
        match &self.body {
            NodeBody::Leaf(_) => 1,
            NodeBody::Internal(c) => c.iter().map(ProofNode::leaf_count).sum(),
        }
    }

    pub fn depth(&self) -> usize {
        1 + self.children().iter().map(ProofNode::depth).max().unwrap_or(0)
    }

    /// Leaves in depth-first order with their paths of child indices.
    pub fn leaves(&self) -> Vec<(Vec<usize>, &Contradiction<S>)> {
        let mut out = Vec::new();
        fn walk<'a, S>(n: &'a ProofNode<S>, path: &mut Vec<usize>, out: &mut Vec<(Vec<usize>, &'a Contradiction<S>)>) {
            match &n.body {
                NodeBody::Leaf(c) => out.push((path.clone(), c)),
                NodeBody::Internal(children) => {
                    for (k, c) in children.iter().enumerate() {
                        path.push(k);
                        walk(c, path, out);
                        path.pop();
                    }
                }
            }
        }
        walk(self, &mut Vec::new(), &mut out);
        out
    }

    pub fn map<T: Scalar>(&self, f: &impl Fn(&S) -> T) -> ProofNode<T> {
        ProofNode {
            split: self.split,
            ground_bound_updates: self
                .ground_bound_updates
                .iter()
                .map(|g| GroundUpdate {
                    var: g.var,
                    which: g.which,
                    value: f(&g.value),
                })
                .collect(),
            added_equations: self.added_equations.iter().map(|e| e.map(f)).collect(),
            lemmas: self
                .lemmas
                .iter()
                .map(|l| Lemma {
                    relu: l.relu,
                    affected_var: l.affected_var,
                    which: l.which,
                    new_bound: f(&l.new_bound),
                    rule: l.rule,
                    antecedent_var: l.antecedent_var,
                    antecedent_which: l.antecedent_which,
                    antecedent_explanation: l.antecedent_explanation.iter().map(f).collect(),
                })
                .collect(),
            body: match &self.body {
                NodeBody::Leaf(c) => NodeBody::Leaf(c.map(f)),
                NodeBody::Internal(ch) => NodeBody::Internal(ch.iter().map(|c| c.map(f)).collect()),
            },
        }
    }
}

/// An unsatisfiability proof for `query`. The query is always kept exact;
/// the tree's scalars are in the solving mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ProofTree<S> {
    pub query: Query<Rational>,
    pub root: ProofNode<S>,
}

impl<S: Scalar> ProofTree<S> {
    /// The same tree with every scalar converted to an exact rational.
    pub fn to_exact(&self) -> ProofTree<Rational> {
        ProofTree {
            query: self.query.clone(),
            root: self.root.map(&|s: &S| s.to_rational()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SearchError {
    #[error("relu {0} is already fixed")]
    AlreadyFixed(usize),
    #[error("relu {0} does not exist")]
    UnknownRelu(usize),
    #[error("depth limit {0} exceeded")]
    DepthLimit(usize),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
}

/// Search state at one node.
#[derive(Clone)]
pub struct NodeState<S> {
    pub engine: Engine<S>,
    pub phases: Vec<Option<Phase>>,
}

impl<S: Scalar> NodeState<S> {
    pub fn new(query: &Query<S>, opts: EngineOptions) -> Self {
        Self {
            engine: Engine::new(query, opts),
            phases: vec![None; query.relus.len()],
        }
    }

    pub fn relu(&self, k: usize) -> ReluConstraint {
        ReluConstraint {
            index: k,
            pair: self.engine.relus()[k],
            phase: self.phases[k],
        }
    }
}

/// Fixes a phase of an unfixed ReLU. Returns the child state and a node
/// stub holding the split's ground facts.
pub fn apply_split<S: Scalar>(mut state: NodeState<S>, relu: usize, phase: Phase) -> Result<(NodeState<S>, ProofNode<S>), SearchError> {
    let current = *state.phases.get(relu).ok_or(SearchError::UnknownRelu(relu))?;
    if current.is_some() {
        return Err(SearchError::AlreadyFixed(relu));
    }
    let pair = state.engine.relus()[relu];
    let (equations, updates) = split_facts::<S>(pair, phase);
    for e in &equations {
        state.engine.add_equation(e);
    }
    for u in &updates {
        state.engine.tighten_ground(u.var, u.which, &u.value);
    }
    state.phases[relu] = Some(phase);
    let stub = ProofNode {
        split: Some(Split { relu, phase }),
        ground_bound_updates: updates,
        added_equations: equations,
        lemmas: Vec::new(),
        body: NodeBody::Internal(Vec::new()),
    };
    Ok((state, stub))
}

/// Lowest-indexed unfixed ReLU whose pair is violated by the assignment.
pub fn pick_split<S: Scalar>(state: &NodeState<S>) -> Option<ReluConstraint> {
    let alpha = state.engine.alpha();
    let eps = if S::EXACT { 0.0 } else { state.engine.options().epsilon };
    (0..state.phases.len()).map(|k| state.relu(k)).find(|r| {
        if r.phase.is_some() {
            return false;
        }
        let b = alpha.get(r.pair.b);
        let f = alpha.get(r.pair.f);
        let want = if b.is_positive() { b.clone() } else { S::zero() };
        f.cmp_tol(&want, eps) != std::cmp::Ordering::Equal
    })
}

/// Forced split choices keyed by the path of `(relu, phase)` fixings that
/// leads to a node. A planned node is split without solving.
pub type SplitPlan = HashMap<Vec<(usize, Phase)>, usize>;

/// Steps replayed on entry to a node, before any solving: a new variable
/// priority for the engine, then explicit row tightenings
/// `(row, target, side)` against the node's current tableau.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeScript {
    pub priority: Vec<VarId>,
    pub tightenings: Vec<(usize, VarId, Side)>,
}

#[derive(Clone)]
pub struct SearchOptions<S> {
    pub engine: EngineOptions,
    /// Order in which a split's children are explored.
    pub child_order: [Phase; 2],
    pub plan: SplitPlan,
    /// Node scripts keyed like `plan`.
    pub scripts: HashMap<Vec<(usize, Phase)>, NodeScript>,
    /// Worker threads for sibling subtrees; 1 keeps everything sequential.
    pub jobs: usize,
    /// Variables to favour in the engine's lowest-first choices; empty
    /// leaves plain index order.
    pub priority: Vec<VarId>,
    pub observer: Option<Arc<dyn TightenObserver<S>>>,
}

impl<S> Default for SearchOptions<S> {
    fn default() -> Self {
        Self {
            engine: EngineOptions::default(),
            child_order: [Phase::Inactive, Phase::Active],
            plan: SplitPlan::new(),
            scripts: HashMap::new(),
            jobs: 1,
            priority: Vec::new(),
            observer: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SearchStats {
    pub nodes: usize,
    pub leaves: usize,
    pub max_depth: usize,
    pub engine: EngineStats,
}

impl SearchStats {
    fn merge(&mut self, o: &SearchStats) {
        self.nodes += o.nodes;
        self.leaves += o.leaves;
        self.max_depth = self.max_depth.max(o.max_depth);
        self.engine.steps += o.engine.steps;
        self.engine.pivots += o.engine.pivots;
        self.engine.updates += o.engine.updates;
        self.engine.tightenings += o.engine.tightenings;
        self.engine.lemmas += o.engine.lemmas;
    }
}

fn delta(after: EngineStats, before: EngineStats) -> EngineStats {
    EngineStats {
        steps: after.steps - before.steps,
        pivots: after.pivots - before.pivots,
        updates: after.updates - before.updates,
        tightenings: after.tightenings - before.tightenings,
        lemmas: after.lemmas - before.lemmas,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome<S> {
    /// A satisfying assignment of every query variable.
    Sat { assignment: Vec<S>, inputs: Vec<S> },
    /// The proof is present when proof production is on.
    Unsat { tree: Option<ProofTree<S>> },
}

struct Explored<S> {
    node: ProofNode<S>,
    sat: Option<Vec<S>>,
    stats: SearchStats,
}

fn explore<S: Scalar>(
    mut state: NodeState<S>,
    mut node: ProofNode<S>,
    path: &mut Vec<(usize, Phase)>,
    opts: &SearchOptions<S>,
    pool: Option<&rayon::ThreadPool>,
) -> Result<Explored<S>, SearchError> {
    let mut stats = SearchStats {
        nodes: 1,
        max_depth: path.len(),
        ..Default::default()
    };
    if let Some(script) = opts.scripts.get(path.as_slice()) {
        if !script.priority.is_empty() {
            state.engine.set_priority(&script.priority);
        }
        for &(row, target, side) in &script.tightenings {
            if row >= state.engine.cfg.tableau.n_rows() || target.0 >= state.engine.cfg.tableau.n_vars() {
                return Err(SearchError::InvalidQuery(format!("script row {row} or variable {target} out of range")));
            }
            state.engine.tighten_row(row, target, side);
        }
    }
    let relu = match opts.plan.get(path.as_slice()) {
        Some(&k) => state.relu(k),
        None => {
            let before = state.engine.stats();
            let verdict = state.engine.solve()?;
            stats.engine = delta(state.engine.stats(), before);
            node.lemmas.extend(state.engine.take_lemmas());
            match verdict {
                Verdict::Unsat(c) => {
                    stats.leaves = 1;
                    node.body = NodeBody::Leaf(c);
                    return Ok(Explored { node, sat: None, stats });
                }
                Verdict::Sat(alpha) => match pick_split(&state) {
                    None => {
                        node.body = NodeBody::Internal(Vec::new());
                        return Ok(Explored {
                            node,
                            sat: Some(alpha.values),
                            stats,
                        });
                    }
                    Some(r) => r,
                },
            }
        }
    };
    if relu.phase.is_some() {
        return Err(SearchError::AlreadyFixed(relu.index));
    }
    if path.len() >= state.phases.len() {
        return Err(SearchError::DepthLimit(state.phases.len()));
    }
    let order = opts.child_order;
    let run = |phase: Phase, state: NodeState<S>, path: &[(usize, Phase)]| -> Result<Explored<S>, SearchError> {
        let (child, stub) = apply_split(state, relu.index, phase)?;
        let mut p = path.to_vec();
        p.push((relu.index, phase));
        explore(child, stub, &mut p, opts, pool)
    };
    let (first, second) = match pool {
        Some(pool) if opts.jobs > 1 => {
            let s0 = state.clone();
            let p0 = path.clone();
            let p1 = path.clone();
            let (a, b) = pool.join(|| run(order[0], s0, &p0), || run(order[1], state, &p1));
            (a?, Some(b?))
        }
        _ => {
            let a = run(order[0], state.clone(), path)?;
            if a.sat.is_some() {
                (a, None)
            } else {
                (a, Some(run(order[1], state, path)?))
            }
        }
    };
    let mut children = Vec::new();
    let mut sat = None;
    for c in std::iter::once(first).chain(second) {
        stats.merge(&c.stats);
        if sat.is_none() {
            sat = c.sat;
        }
        children.push(c.node);
    }
    node.body = NodeBody::Internal(children);
    Ok(Explored { node, sat, stats })
}

/// Decides `query` by case splitting. With proofs on, an UNSAT answer
/// carries a proof tree.
pub fn verify<S: Scalar>(query: &Query<Rational>, opts: &SearchOptions<S>) -> Result<(Outcome<S>, SearchStats), SearchError> {
    query.validate().map_err(SearchError::InvalidQuery)?;
    let q: Query<S> = query.map(S::from_rational);
    let mut state = NodeState::new(&q, opts.engine);
    state.engine.set_observer(opts.observer.clone());
    if !opts.priority.is_empty() {
        state.engine.set_priority(&opts.priority);
    }
    let root = ProofNode {
        split: None,
        ground_bound_updates: Vec::new(),
        added_equations: Vec::new(),
        lemmas: Vec::new(),
        body: NodeBody::Internal(Vec::new()),
    };
    let pool = if opts.jobs > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(opts.jobs)
                .build()
                .map_err(|e| SearchError::InvalidQuery(e.to_string()))?,
        )
    } else {
        None
    };
    let explored = explore(state, root, &mut Vec::new(), opts, pool.as_ref())?;
    let outcome = match explored.sat {
        Some(a) => {
            let n = query.n_vars();
            let inputs = query.inputs.iter().map(|v| a[v.0].clone()).collect();
            Outcome::Sat {
                assignment: a[..n].to_vec(),
                inputs,
            }
        }
        None => Outcome::Unsat {
            tree: opts.engine.produce_proofs.then(|| ProofTree {
                query: query.clone(),
                root: explored.node,
            }),
        },
    };
    Ok((outcome, explored.stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{encode, parse_network, parse_property};
    use crate::lp_core::BoundKind;
    use crate::scalar::{rat, ExtendedScalar};

    const TOY_NET: &str = r#"{"layers":[2,1,1,1],"weights":[[["1","-1"]],[["-2"]],[["1"]]],"biases":[["0"],["0"],["0"]]}"#;
    const PHI: &str = r#"{"input": [["2", "3"], ["-1", "1"]], "output": [["1/4", "1/2"]],
        "neurons": [{"name": "b1_0", "lower": "-1/2", "upper": "1/2"}, {"name": "f1_0", "lower": "0", "upper": "1/2"},
                    {"name": "b2_0", "lower": "-1/2", "upper": "1/2"}, {"name": "f2_0", "lower": "1/4", "upper": "1/2"}]}"#;

    fn phi() -> Query<Rational> {
        encode(&parse_network(TOY_NET).unwrap(), &parse_property(PHI).unwrap()).unwrap()
    }

    fn golden_plan() -> SplitPlan {
        let mut plan = SplitPlan::new();
        plan.insert(vec![], 0);
        plan.insert(vec![(0, Phase::Active)], 1);
        plan
    }

    /// Replays the hand derivation at the both-active node: `b1` from the
    /// first hidden row, `f1` from the active-split row, then `b2` from the
    /// second hidden row, with `b2` checked first for clashes.
    fn golden_scripts() -> HashMap<Vec<(usize, Phase)>, NodeScript> {
        let script = NodeScript {
            priority: vec![VarId(4)],
            tightenings: vec![(0, VarId(2), Side::Lower), (3, VarId(3), Side::Lower), (1, VarId(4), Side::Upper)],
        };
        HashMap::from([(vec![(0, Phase::Active), (1, Phase::Active)], script)])
    }

    #[test]
    fn inactive_split_resets_grounds() {
        let q = phi();
        let state = NodeState::new(&q, EngineOptions::default());
        let (child, stub) = apply_split(state, 0, Phase::Inactive).unwrap();
        let b = child.engine.bounds();
        let (b1, f1) = (VarId(2), VarId(3));
        assert_eq!(b.ground(b1, Side::Upper), &ExtendedScalar::Finite(rat("0")));
        assert_eq!(b.ground(f1, Side::Upper), &ExtendedScalar::Finite(rat("0")));
        assert!(b.farkas(b1, Side::Upper).iter().all(Scalar::is_zero));
        assert_eq!(child.engine.cfg.tableau.n_rows(), 3);
        assert_eq!(stub.ground_bound_updates.len(), 3);
    }

    #[test]
    fn active_split_appends_row() {
        let q = phi();
        let state = NodeState::new(&q, EngineOptions::default());
        let (child, stub) = apply_split(state, 0, Phase::Active).unwrap();
        assert_eq!(child.engine.cfg.tableau.n_rows(), 4);
        assert_eq!(child.engine.bounds().ground(VarId(2), Side::Lower), &ExtendedScalar::Finite(rat("0")));
        assert_eq!(child.engine.bounds().farkas(VarId(2), Side::Lower).len(), 4);
        assert_eq!(stub.added_equations.len(), 1);
        assert!(matches!(apply_split(child, 0, Phase::Inactive), Err(SearchError::AlreadyFixed(0))));
    }

    #[test]
    fn pick_split_finds_lowest_violation() {
        let q = phi();
        let mut state = NodeState::new(&q, EngineOptions::default());
        assert!(pick_split(&state).is_none());
        state.engine.cfg.alpha.values[2] = rat("-1");
        state.engine.cfg.alpha.values[3] = rat("3");
        assert_eq!(pick_split(&state).unwrap().index, 0);
        state.phases[0] = Some(Phase::Active);
        state.engine.cfg.alpha.values[4] = rat("2");
        assert_eq!(pick_split(&state).unwrap().index, 1);
    }

    #[test]
    fn golden_tree_shape_and_leaf_values() {
        let q = phi();
        let opts = SearchOptions::<Rational> {
            plan: golden_plan(),
            scripts: golden_scripts(),
            ..Default::default()
        };
        let (outcome, stats) = verify(&q, &opts).unwrap();
        let Outcome::Unsat { tree: Some(tree) } = outcome else { panic!("expected unsat") };
        assert_eq!(tree.root.leaf_count(), 3);
        assert_eq!(stats.leaves, 3);
        let leaves = tree.root.leaves();
        let Contradiction::Farkas(w) = leaves[0].1 else { panic!("{:?}", leaves[0]) };
        assert_eq!(w, &["-1", "0", "0"].map(rat).to_vec());
        assert_eq!(leaves[1].1, &Contradiction::VarSymbol(VarId(5)));
        let Contradiction::Farkas(w) = leaves[2].1 else { panic!("{:?}", leaves[2]) };
        assert_eq!(w, &["-2", "1", "0", "-2", "0"].map(rat).to_vec());
        // Root LP plus both active splits.
        let mut st = NodeState::new(&q, EngineOptions::default());
        for k in 0..2 {
            st = apply_split(st, k, Phase::Active).unwrap().0;
        }
        for l in &tree.root.children()[1].lemmas {
            st.engine.tighten_ground(l.affected_var, l.which, &l.new_bound);
        }
        for l in &tree.root.children()[1].children()[1].lemmas {
            st.engine.tighten_ground(l.affected_var, l.which, &l.new_bound);
        }
        let r = st.engine.cfg.tableau.combine_initial(w);
        let up = st.engine.bounds().row_extreme(&r, Side::Upper, BoundKind::Ground);
        assert_eq!(up, ExtendedScalar::Finite(rat("-2")), "w = {w:?}");
    }

    #[test]
    fn sat_point_property() {
        let net = parse_network(TOY_NET).unwrap();
        let prop = parse_property(r#"{"input": [["1","1"],["2","2"]], "output": [["0","0"]]}"#).unwrap();
        let q = encode(&net, &prop).unwrap();
        let (outcome, _) = verify(&q, &SearchOptions::<Rational>::default()).unwrap();
        let Outcome::Sat { inputs, .. } = outcome else { panic!() };
        assert_eq!(inputs, vec![rat("1"), rat("2")]);
    }

    #[test]
    fn default_search_proves_phi() {
        let (outcome, _) = verify(&phi(), &SearchOptions::<Rational>::default()).unwrap();
        assert!(matches!(outcome, Outcome::Unsat { tree: Some(_) }));
        let opts = SearchOptions::<Rational> { jobs: 3, plan: golden_plan(), ..Default::default() };
        let (par, _) = verify(&phi(), &opts).unwrap();
        let seq = verify(&phi(), &SearchOptions::<Rational> { plan: golden_plan(), ..Default::default() }).unwrap().0;
        assert_eq!(par, seq);
    }
}
