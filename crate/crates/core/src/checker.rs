//! Independent validation of proof trees in exact arithmetic.
//!
//! The checker replays the tree top-down, keeping the equations and ground
//! bounds of each node. It carries its own copy of the split facts and of
//! the ReLU rule table and never divides: a certificate is checked by
//! forming linear combinations of equations and bounding them.

use std::cmp::Ordering;
use std::fmt;

use rayon::prelude::*;
use serde::Serialize;

use crate::frontend::encode;
use crate::lp_core::{Equation, Query, ReluPair, Side, VarId};
use crate::proof_format::ProofFile;
use crate::scalar::{ExtendedScalar, Rational, Scalar};
use crate::search::{verify, GroundUpdate, NodeBody, Outcome, Phase, ProofNode, SearchOptions};
use crate::simplex::{Contradiction, EngineOptions};
use crate::tightening::{Lemma, ReluRule};

type Bound = ExtendedScalar<Rational>;

fn gt(a: &Bound, b: &Bound) -> bool {
    a.cmp_exact(b) == Ordering::Greater
}

fn lt(a: &Bound, b: &Bound) -> bool {
    a.cmp_exact(b) == Ordering::Less
}

/// Child indices from the root; shown as `root/1/0`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct NodePath(pub Vec<usize>);

impl fmt::Display for NodePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("root")?;
        for k in &self.0 {
            write!(f, "/{k}")?;
        }
        Ok(())
    }
}

impl Serialize for NodePath {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

/// The LP at one node: query equations plus split rows, and ground bounds
/// after split facts and lemmas.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeLp {
    pub equations: Vec<Equation<Rational>>,
    pub lower: Vec<Bound>,
    pub upper: Vec<Bound>,
}

impl NodeLp {
    pub fn root(query: &Query<Rational>) -> Self {
        Self {
            equations: query.equations.clone(),
            lower: query.lower.clone(),
            upper: query.upper.clone(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.lower.len()
    }

    pub fn n_rows(&self) -> usize {
        self.equations.len()
    }

    fn tighten(&mut self, var: VarId, which: Side, value: &Rational) {
        let v = Bound::Finite(value.clone());
        match which {
            Side::Lower if gt(&v, &self.lower[var.0]) => self.lower[var.0] = v,
            Side::Upper if lt(&v, &self.upper[var.0]) => self.upper[var.0] = v,
            _ => {}
        }
    }

    /// `Σ w_k (a_k·x − rhs_k)` as `(coefficients, constant)`.
    fn combine(&self, w: &[Rational]) -> (Vec<Rational>, Rational) {
        let mut row = vec![Rational::zero(); self.n_vars()];
        let mut constant = Rational::zero();
        for (e, wk) in self.equations.iter().zip(w) {
            if wk.is_zero() {
                continue;
            }
            for (v, c) in &e.terms {
                row[v.0] = &row[v.0] + &(wk * c);
            }
            constant = &constant - &(wk * &e.rhs);
        }
        (row, constant)
    }

    /// Extreme value of `coeffs·x + constant` over the ground box.
    fn extreme(&self, coeffs: &[Rational], constant: Rational, which: Side) -> Bound {
        let mut acc = constant;
        for (j, c) in coeffs.iter().enumerate() {
            let use_upper = (c.sign() == Ordering::Greater) == (which == Side::Upper);
            if c.is_zero() {
                continue;
            }
            let b = if use_upper { &self.upper[j] } else { &self.lower[j] };
            match b {
                Bound::Finite(x) => acc = &acc + &(c * x),
                _ => {
                    return match which {
                        Side::Upper => Bound::PosInf,
                        Side::Lower => Bound::NegInf,
                    }
                }
            }
        }
        Bound::Finite(acc)
    }

    /// The bound on `var` that the Farkas vector `f` derives from ground
    /// bounds: `var = var + Σ f_k (a_k·x − rhs_k)`.
    pub fn reconstruct(&self, f: &[Rational], var: VarId, which: Side) -> Bound {
        let (mut row, constant) = self.combine(f);
        row[var.0] = &row[var.0] + &Rational::one();
        self.extreme(&row, constant, which)
    }

    /// Upper bound of the certificate row `wᵀ·A`; negative means the node's
    /// LP is infeasible.
    pub fn certificate_upper(&self, w: &[Rational]) -> Bound {
        let (row, constant) = self.combine(w);
        self.extreme(&row, constant, Side::Upper)
    }
}

/// Leaf verdict from [`check_leaf`].
#[derive(Debug, Clone, PartialEq)]
pub enum LeafCheck {
    Pass { upper: Option<Rational> },
    Fail(String),
}

pub fn check_leaf(lp: &NodeLp, contradiction: &Contradiction<Rational>) -> LeafCheck {
    match contradiction {
        Contradiction::VarSymbol(v) => {
            if v.0 >= lp.n_vars() {
                return LeafCheck::Fail(format!("variable {v} does not exist"));
            }
            if gt(&lp.lower[v.0], &lp.upper[v.0]) {
                LeafCheck::Pass { upper: None }
            } else {
                LeafCheck::Fail(format!("ground bounds of {v} are [{}, {}], no clash", lp.lower[v.0], lp.upper[v.0]))
            }
        }
        Contradiction::Farkas(w) => {
            if w.len() != lp.n_rows() {
                return LeafCheck::Fail(format!("dimension mismatch: vector has length {}, node has {} rows", w.len(), lp.n_rows()));
            }
            match lp.certificate_upper(w) {
                Bound::Finite(u) if u.sign() == Ordering::Less => LeafCheck::Pass { upper: Some(u) },
                b => LeafCheck::Fail(format!("certificate row has upper bound {b}, not negative")),
            }
        }
    }
}

/// `(antecedent on f, antecedent side, conclusion on f, conclusion side)`
/// for each rule, in the order R1..R5.
const RULE_TABLE: [(ReluRule, bool, Side, bool, Side); 5] = [
    (ReluRule::R1, true, Side::Lower, false, Side::Lower),
    (ReluRule::R2, false, Side::Lower, true, Side::Lower),
    (ReluRule::R3, true, Side::Upper, false, Side::Upper),
    (ReluRule::R4, false, Side::Upper, true, Side::Upper),
    (ReluRule::R5, false, Side::Upper, true, Side::Upper),
];

/// Whether antecedent value `a` justifies conclusion `c` under `rule`.
/// Conclusions weaker than the rule's own are accepted.
fn rule_admits(rule: ReluRule, a: &Bound, c: &Rational) -> Result<(), String> {
    let zero = Bound::Finite(Rational::zero());
    let c = Bound::Finite(c.clone());
    match rule {
        ReluRule::R1 | ReluRule::R2 => {
            if !gt(a, &zero) {
                return Err(format!("premise fails: antecedent {a} is not positive"));
            }
            if gt(&c, a) {
                return Err(format!("conclusion {c} exceeds antecedent {a}"));
            }
        }
        ReluRule::R3 => {
            if lt(&c, a) {
                return Err(format!("conclusion {c} is below antecedent {a}"));
            }
        }
        ReluRule::R4 | ReluRule::R5 => {
            // f ≤ max(u(b), 0) is what both rules state.
            let floor = if gt(a, &zero) { a.clone() } else { zero };
            if lt(&c, &floor) {
                return Err(format!("conclusion {c} is below max({a}, 0)"));
            }
        }
    }
    Ok(())
}

pub fn check_lemma(lp: &NodeLp, query: &Query<Rational>, lemma: &Lemma<Rational>) -> Result<(), String> {
    let pair = *query.relus.get(lemma.relu).ok_or_else(|| format!("relu {} does not exist", lemma.relu))?;
    let &(_, a_on_f, a_side, c_on_f, c_side) = RULE_TABLE
        .iter()
        .find(|r| r.0 == lemma.rule)
        .ok_or_else(|| format!("unknown rule {}", lemma.rule))?;
    let pick = |on_f: bool| if on_f { pair.f } else { pair.b };
    if (lemma.antecedent_var, lemma.antecedent_which) != (pick(a_on_f), a_side) {
        return Err(format!("rule {} needs the {a_side} bound of {} as antecedent", lemma.rule, pick(a_on_f)));
    }
    if (lemma.affected_var, lemma.which) != (pick(c_on_f), c_side) {
        return Err(format!("rule {} concludes the {c_side} bound of {}", lemma.rule, pick(c_on_f)));
    }
    if lemma.antecedent_explanation.len() != lp.n_rows() {
        return Err(format!(
            "dimension mismatch: explanation has length {}, node has {} rows",
            lemma.antecedent_explanation.len(),
            lp.n_rows()
        ));
    }
    let a = lp.reconstruct(&lemma.antecedent_explanation, lemma.antecedent_var, lemma.antecedent_which);
    rule_admits(lemma.rule, &a, &lemma.new_bound)
}

/// The ground facts a split must contribute.
fn canonical_split(query: &Query<Rational>, relu: usize, phase: Phase) -> (Vec<Equation<Rational>>, Vec<GroundUpdate<Rational>>) {
    let p = query.relus[relu];
    let zero = Rational::zero;
    let up = |var, which| GroundUpdate { var, which, value: zero() };
    match phase {
        Phase::Active => (
            vec![Equation::new(vec![(p.b, Rational::one()), (p.f, -Rational::one())], zero())],
            vec![up(p.b, Side::Lower)],
        ),
        Phase::Inactive => (Vec::new(), vec![up(p.b, Side::Upper), up(p.f, Side::Lower), up(p.f, Side::Upper)]),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LeafStatus {
    Pass,
    Fail,
    /// The leaf was not reached because an ancestor was rejected.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeafReport {
    pub path: NodePath,
    pub status: LeafStatus,
    /// Upper bound of a Farkas certificate row.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upper: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Issue {
    pub path: NodePath,
    /// `query`, `shape`, `lemma` or `leaf`.
    pub kind: &'static str,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct CheckReport {
    pub accepted: bool,
    pub nodes: usize,
    pub lemmas_checked: usize,
    pub issues: Vec<Issue>,
    pub leaves: Vec<LeafReport>,
}

impl CheckReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn failed_leaves(&self) -> impl Iterator<Item = &LeafReport> {
        self.leaves.iter().filter(|l| l.status == LeafStatus::Fail)
    }
}

#[derive(Debug, Clone, Default)]
pub struct CheckOptions {
    /// The query the proof must be about, typically re-encoded from the
    /// network and property files. Without it the file's own network and
    /// property echo is re-encoded when present.
    pub expected: Option<Query<Rational>>,
    /// Parallel leaf checks when above 1.
    pub jobs: usize,
}

struct Walk<'a> {
    query: &'a Query<Rational>,
    report: CheckReport,
    pending: Vec<(NodePath, NodeLp, &'a Contradiction<Rational>)>,
}

impl<'a> Walk<'a> {
    fn issue(&mut self, path: &NodePath, kind: &'static str, reason: String) {
        self.report.issues.push(Issue {
            path: path.clone(),
            kind,
            reason,
        });
    }

    fn skip_leaves(&mut self, node: &ProofNode<Rational>, path: &mut NodePath) {
        match &node.body {
            NodeBody::Leaf(_) => self.report.leaves.push(LeafReport {
                path: path.clone(),
                status: LeafStatus::Skipped,
                upper: None,
                reason: None,
            }),
            NodeBody::Internal(c) => {
                for (k, child) in c.iter().enumerate() {
                    path.0.push(k);
                    self.skip_leaves(child, path);
                    path.0.pop();
                }
            }
        }
    }

    fn node(&mut self, node: &'a ProofNode<Rational>, mut lp: NodeLp, phases: &mut Vec<Option<Phase>>, path: &mut NodePath) {
        self.report.nodes += 1;
        for (k, lemma) in node.lemmas.iter().enumerate() {
            self.report.lemmas_checked += 1;
            if let Err(reason) = check_lemma(&lp, self.query, lemma) {
                self.issue(path, "lemma", format!("lemma {k} ({}): {reason}", lemma.rule));
                self.skip_leaves(node, path);
                return;
            }
            lp.tighten(lemma.affected_var, lemma.which, &lemma.new_bound);
        }
        let children = match &node.body {
            NodeBody::Leaf(c) => {
                self.pending.push((path.clone(), lp, c));
                return;
            }
            NodeBody::Internal(children) => children,
        };
        if let Err(reason) = self.split_shape(children, phases) {
            self.issue(path, "shape", reason);
            self.skip_leaves(node, path);
            return;
        }
        for (k, child) in children.iter().enumerate() {
            let split = child.split.expect("checked by split_shape");
            let mut child_lp = lp.clone();
            child_lp.equations.extend(child.added_equations.iter().cloned());
            for g in &child.ground_bound_updates {
                child_lp.tighten(g.var, g.which, &g.value);
            }
            phases[split.relu] = Some(split.phase);
            path.0.push(k);
            self.node(child, child_lp, phases, path);
            path.0.pop();
            phases[split.relu] = None;
        }
    }

    fn split_shape(&self, children: &[ProofNode<Rational>], phases: &[Option<Phase>]) -> Result<(), String> {
        if children.len() != 2 {
            return Err(format!("internal node has {} children, expected 2", children.len()));
        }
        let (Some(s0), Some(s1)) = (children[0].split, children[1].split) else {
            return Err("child without a split".into());
        };
        if s0.relu != s1.relu {
            return Err(format!("children split different relus {} and {}", s0.relu, s1.relu));
        }
        if s0.relu >= self.query.relus.len() {
            return Err(format!("split on relu {} which is not in the query", s0.relu));
        }
        if s0.phase == s1.phase {
            return Err(format!("both children fix relu {} {}", s0.relu, s0.phase));
        }
        if phases[s0.relu].is_some() {
            return Err(format!("relu {} is already fixed on this path", s0.relu));
        }
        for c in children {
            let split = c.split.expect("checked above");
            let (eqs, updates) = canonical_split(self.query, split.relu, split.phase);
            if c.added_equations != eqs || c.ground_bound_updates != updates {
                return Err(format!("{} child of relu {} does not carry the split's ground facts", split.phase, split.relu));
            }
        }
        Ok(())
    }
}

fn query_difference(got: &Query<Rational>, want: &Query<Rational>) -> Option<String> {
    if got.var_names != want.var_names {
        return Some("variables differ".into());
    }
    if got.equations != want.equations {
        let k = got.equations.iter().zip(&want.equations).position(|(a, b)| a != b).unwrap_or(got.equations.len().min(want.equations.len()));
        return Some(format!("equation {k} differs"));
    }
    if got.lower != want.lower || got.upper != want.upper {
        return Some("ground bounds differ".into());
    }
    if got.relus != want.relus {
        return Some("relu pairs differ".into());
    }
    if got.inputs != want.inputs || got.outputs != want.outputs {
        return Some("input/output variables differ".into());
    }
    None
}

/// Validates a proof file. Always exact.
pub fn check(file: &ProofFile, opts: &CheckOptions) -> CheckReport {
    let query = &file.tree.query;
    let root_path = NodePath::default();
    let mut walk = Walk {
        query,
        report: CheckReport::default(),
        pending: Vec::new(),
    };
    let echo = match (&file.network, &file.property) {
        (Some(n), Some(p)) => match encode(n, p) {
            Ok(q) => Some(q),
            Err(e) => {
                walk.issue(&root_path, "query", format!("network/property echo does not encode: {e}"));
                None
            }
        },
        _ => None,
    };
    for want in opts.expected.iter().chain(echo.as_ref()) {
        if let Some(d) = query_difference(query, want) {
            walk.issue(&root_path, "query", format!("root LP does not match the query encoding: {d}"));
        }
    }
    if let Err(e) = query.validate() {
        walk.issue(&root_path, "query", e);
    }
    let root = &file.tree.root;
    if root.split.is_some() || !root.added_equations.is_empty() || !root.ground_bound_updates.is_empty() {
        walk.issue(&root_path, "shape", "root node must not carry split facts".into());
    }
    if walk.report.issues.is_empty() {
        walk.node(root, NodeLp::root(query), &mut vec![None; query.relus.len()], &mut NodePath::default());
    }
    let pending = std::mem::take(&mut walk.pending);
    let run = |(path, lp, c): &(NodePath, NodeLp, &Contradiction<Rational>)| (path.clone(), check_leaf(lp, c));
    let results: Vec<(NodePath, LeafCheck)> = if opts.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(opts.jobs).build();
        match pool {
            Ok(pool) => pool.install(|| pending.par_iter().map(run).collect()),
            Err(_) => pending.iter().map(run).collect(),
        }
    } else {
        pending.iter().map(run).collect()
    };
    for (path, r) in results {
        let leaf = match r {
            LeafCheck::Pass { upper } => LeafReport {
                path,
                status: LeafStatus::Pass,
                upper: upper.map(|u| u.to_string()),
                reason: None,
            },
            LeafCheck::Fail(reason) => {
                walk.issue(&path, "leaf", reason.clone());
                LeafReport {
                    path,
                    status: LeafStatus::Fail,
                    upper: None,
                    reason: Some(reason),
                }
            }
        };
        walk.report.leaves.push(leaf);
    }
    walk.report.leaves.sort_by(|a, b| a.path.0.cmp(&b.path.0));
    walk.report.accepted = walk.report.issues.is_empty();
    walk.report
}

/// The LP of the node at `path` as the checker sees it, lemmas included.
/// `None` if the path does not exist.
pub fn node_lp(file: &ProofFile, path: &NodePath) -> Option<NodeLp> {
    let mut lp = NodeLp::root(&file.tree.query);
    let mut node = &file.tree.root;
    let apply_lemmas = |lp: &mut NodeLp, node: &ProofNode<Rational>| {
        for l in &node.lemmas {
            lp.tighten(l.affected_var, l.which, &l.new_bound);
        }
    };
    apply_lemmas(&mut lp, node);
    for &k in &path.0 {
        node = node.children().get(k)?;
        lp.equations.extend(node.added_equations.iter().cloned());
        for g in &node.ground_bound_updates {
            lp.tighten(g.var, g.which, &g.value);
        }
        apply_lemmas(&mut lp, node);
    }
    Some(lp)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Recovery {
    /// A replacement for the leaf. Its body, and lemmas to append to the
    /// leaf's own, come from a fresh exact search over the leaf's LP and
    /// the ReLUs still free there; a single certificate when the LP alone
    /// is infeasible.
    FreshProof(ProofNode<Rational>),
    /// Values of every variable satisfying the leaf's LP and all ReLUs.
    CounterexampleFound(Vec<Rational>),
    Inconclusive(String),
}

/// Re-solves a leaf exactly. `free` lists the ReLUs not fixed on the path
/// to the leaf, with their indices in the original query; fixed ones are
/// already linear facts of `lp`.
pub fn recover_leaf(lp: &NodeLp, free: &[(usize, ReluPair)], max_iters: u64) -> Recovery {
    let n = lp.n_vars();
    let query = Query {
        var_names: (0..n).map(|j| format!("v{j}")).collect(),
        equations: lp.equations.clone(),
        lower: lp.lower.clone(),
        upper: lp.upper.clone(),
        relus: free.iter().map(|&(_, p)| p).collect(),
        inputs: Vec::new(),
        outputs: Vec::new(),
    };
    let opts = SearchOptions::<Rational> {
        engine: EngineOptions {
            max_iters,
            ..EngineOptions::default()
        },
        ..SearchOptions::default()
    };
    match verify(&query, &opts) {
        Ok((Outcome::Unsat { tree: Some(tree) }, _)) => {
            let mut root = tree.root;
            renumber(&mut root, free);
            Recovery::FreshProof(root)
        }
        Ok((Outcome::Unsat { tree: None }, _)) => Recovery::Inconclusive("search returned no proof".into()),
        Ok((Outcome::Sat { assignment, .. }, _)) => Recovery::CounterexampleFound(assignment),
        Err(e) => Recovery::Inconclusive(e.to_string()),
    }
}

/// Maps ReLU indices of a sub-search back to the original query.
fn renumber(node: &mut ProofNode<Rational>, free: &[(usize, ReluPair)]) {
    if let Some(s) = node.split.as_mut() {
        s.relu = free[s.relu].0;
    }
    for l in &mut node.lemmas {
        l.relu = free[l.relu].0;
    }
    if let NodeBody::Internal(c) = &mut node.body {
        for ch in c {
            renumber(ch, free);
        }
    }
}

/// ReLUs not fixed by a split on the path to `path`.
pub fn free_relus(file: &ProofFile, path: &NodePath) -> Option<Vec<(usize, ReluPair)>> {
    let mut fixed = vec![false; file.tree.query.relus.len()];
    let mut node = &file.tree.root;
    for &k in &path.0 {
        node = node.children().get(k)?;
        if let Some(s) = node.split {
            *fixed.get_mut(s.relu)? = true;
        }
    }
    Some(file.tree.query.relus.iter().copied().enumerate().filter(|(k, _)| !fixed[*k]).collect())
}

/// The strongest conclusion `rule` allows from antecedent value `a`, if
/// its premise holds.
fn exact_conclusion(rule: ReluRule, a: &Bound) -> Option<Rational> {
    let a = a.finite()?.clone();
    match rule {
        ReluRule::R1 | ReluRule::R2 => (a.sign() == Ordering::Greater).then_some(a),
        ReluRule::R3 => Some(a),
        ReluRule::R4 | ReluRule::R5 => Some(if a.sign() == Ordering::Greater { a } else { Rational::zero() }),
    }
}

/// What [`repair`] did.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RepairLog {
    /// Lemmas whose conclusion was replaced by the exact consequence of
    /// their own explanation, as `(node, lemma index)`.
    pub weakened_lemmas: Vec<(NodePath, usize)>,
    /// Lemmas removed because no conclusion could be justified.
    pub dropped_lemmas: Vec<(NodePath, usize)>,
    pub patched_leaves: Vec<NodePath>,
    pub counterexamples: Vec<(NodePath, Vec<Rational>)>,
    pub inconclusive: Vec<(NodePath, String)>,
}

fn node_mut<'a>(root: &'a mut ProofNode<Rational>, path: &NodePath) -> Option<&'a mut ProofNode<Rational>> {
    let mut node = root;
    for &k in &path.0 {
        node = match &mut node.body {
            NodeBody::Internal(c) => c.get_mut(k)?,
            NodeBody::Leaf(_) => return None,
        };
    }
    Some(node)
}

/// Patches a rejected proof. A failing lemma gets the conclusion its own
/// explanation justifies exactly, or is dropped when there is none; then
/// every failing leaf is re-solved with [`recover_leaf`]. Returns the new
/// file, its report and a log. Shape and query problems are not
/// repairable and are left in place.
pub fn repair(file: &ProofFile, opts: &CheckOptions, max_iters: u64) -> (ProofFile, CheckReport, RepairLog) {
    let mut file = file.clone();
    let mut log = RepairLog::default();
    let mut report = check(&file, opts);
    while let Some(issue) = report.issues.iter().find(|i| i.kind == "lemma").cloned() {
        let Some(mut lp) = node_lp_before_lemmas(&file, &issue.path) else { break };
        let query = file.tree.query.clone();
        let Some(node) = node_mut(&mut file.tree.root, &issue.path) else { break };
        let mut bad = None;
        for (k, l) in node.lemmas.iter().enumerate() {
            if check_lemma(&lp, &query, l).is_err() {
                bad = Some(k);
                break;
            }
            lp.tighten(l.affected_var, l.which, &l.new_bound);
        }
        let Some(k) = bad else { break };
        let l = &node.lemmas[k];
        let a = lp.reconstruct(&l.antecedent_explanation, l.antecedent_var, l.antecedent_which);
        let fixed = exact_conclusion(l.rule, &a).filter(|_| l.antecedent_explanation.len() == lp.n_rows());
        let mut weakened = l.clone();
        match fixed {
            Some(c) => {
                weakened.new_bound = c;
                if check_lemma(&lp, &query, &weakened).is_ok() {
                    node.lemmas[k] = weakened;
                    log.weakened_lemmas.push((issue.path.clone(), k));
                } else {
                    node.lemmas.remove(k);
                    log.dropped_lemmas.push((issue.path.clone(), k));
                }
            }
            None => {
                node.lemmas.remove(k);
                log.dropped_lemmas.push((issue.path.clone(), k));
            }
        }
        report = check(&file, opts);
    }
    let failing: Vec<NodePath> = report.failed_leaves().map(|l| l.path.clone()).collect();
    for path in failing {
        let (Some(lp), Some(free)) = (node_lp(&file, &path), free_relus(&file, &path)) else { continue };
        match recover_leaf(&lp, &free, max_iters) {
            Recovery::FreshProof(sub) => {
                if let Some(node) = node_mut(&mut file.tree.root, &path) {
                    node.lemmas.extend(sub.lemmas);
                    node.body = sub.body;
                    log.patched_leaves.push(path);
                }
            }
            Recovery::CounterexampleFound(x) => log.counterexamples.push((path, x)),
            Recovery::Inconclusive(why) => log.inconclusive.push((path, why)),
        }
    }
    let report = check(&file, opts);
    (file, report, log)
}

/// Like [`node_lp`] but without the lemmas of the final node.
fn node_lp_before_lemmas(file: &ProofFile, path: &NodePath) -> Option<NodeLp> {
    let mut lp = NodeLp::root(&file.tree.query);
    let mut node = &file.tree.root;
    for (depth, &k) in std::iter::once(&usize::MAX).chain(&path.0).enumerate() {
        if depth > 0 {
            node = node.children().get(k)?;
            lp.equations.extend(node.added_equations.iter().cloned());
            for g in &node.ground_bound_updates {
                lp.tighten(g.var, g.which, &g.value);
            }
        }
        if depth < path.0.len() {
            for l in &node.lemmas {
                lp.tighten(l.affected_var, l.which, &l.new_bound);
            }
        }
    }
    Some(lp)
}
