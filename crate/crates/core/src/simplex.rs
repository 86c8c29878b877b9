//! The derivation rules of the abstract Simplex calculus, driven to a
//! verdict with Bland's rule, and the Farkas contradiction on failure.

use std::cmp::Ordering;
use std::sync::Arc;

use thiserror::Error;

use crate::lp_core::{
    slack_sets, update_assignment, Assignment, BoundKind, BoundProfile, Equation, LpError, Query,
    ReluPair, Side, SimplexConfig, VarId,
};
use crate::scalar::{ExtendedScalar, Scalar, DEFAULT_EPSILON};
use crate::tightening::{relu_propagate, tighten_from_row, Lemma, TightenObserver};

/// Certificate that a node's LP has no solution.
#[derive(Debug, Clone, PartialEq)]
pub enum Contradiction<S> {
    /// Ground bounds of this variable clash.
    VarSymbol(VarId),
    /// `wᵀ·A₀` has a negative upper bound under the ground bounds.
    Farkas(Vec<S>),
}

impl<S: Scalar> Contradiction<S> {
    pub fn map<T: Scalar>(&self, f: impl Fn(&S) -> T) -> Contradiction<T> {
        match self {
            Contradiction::VarSymbol(v) => Contradiction::VarSymbol(*v),
            Contradiction::Farkas(w) => Contradiction::Farkas(w.iter().map(f).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict<S> {
    Sat(Assignment<S>),
    Unsat(Contradiction<S>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepResult<S> {
    Continue,
    Terminal(Verdict<S>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("iteration limit of {0} reached")]
    IterationLimit(u64),
    #[error("no derivation rule applies")]
    NoRuleApplicable,
    #[error("bounds of {0} do not clash")]
    NotContradictory(VarId),
    #[error(transparent)]
    Lp(#[from] LpError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineOptions {
    pub max_iters: u64,
    /// Tolerance for bound comparisons; ignored by exact scalars.
    pub epsilon: f64,
    /// Maintain Farkas vectors and emit certificates.
    pub produce_proofs: bool,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            max_iters: 1_000_000,
            epsilon: DEFAULT_EPSILON,
            produce_proofs: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EngineStats {
    pub steps: u64,
    pub pivots: u64,
    pub updates: u64,
    pub tightenings: u64,
    pub lemmas: u64,
}

/// `f_upper(v) - f_lower(v)`, or the variable itself when both are zero.
pub fn build_contradiction<S: Scalar>(
    v: VarId,
    bounds: &BoundProfile<S>,
    eps: f64,
) -> Result<Contradiction<S>, EngineError> {
    let eps = if S::EXACT { 0.0 } else { eps };
    if bounds.dynamic(v, Side::Lower).cmp_tol(bounds.dynamic(v, Side::Upper), eps) != Ordering::Greater {
        return Err(EngineError::NotContradictory(v));
    }
    Ok(contradiction_of(v, bounds))
}

fn contradiction_of<S: Scalar>(v: VarId, bounds: &BoundProfile<S>) -> Contradiction<S> {
    let fu = bounds.farkas(v, Side::Upper);
    let fl = bounds.farkas(v, Side::Lower);
    if fu.iter().chain(fl).all(Scalar::is_zero) {
        return Contradiction::VarSymbol(v);
    }
    Contradiction::Farkas(fu.iter().zip(fl).map(|(u, l)| u.sub(l).snap()).collect())
}

/// One Simplex instance with its ReLU side constraints.
#[derive(Clone)]
pub struct Engine<S> {
    pub cfg: SimplexConfig<S>,
    relus: Vec<ReluPair>,
    relu_of_var: Vec<Vec<usize>>,
    opts: EngineOptions,
    lemmas: Vec<Lemma<S>>,
    observer: Option<Arc<dyn TightenObserver<S>>>,
    stats: EngineStats,
    /// Variables in Bland order; `rank` is its inverse.
    order: Vec<VarId>,
    rank: Vec<usize>,
}

impl<S: Scalar> Engine<S> {
    pub fn new(query: &Query<S>, opts: EngineOptions) -> Self {
        let cfg = if opts.produce_proofs {
            SimplexConfig::from_query(query)
        } else {
            SimplexConfig::from_query_untracked(query)
        };
        let n = cfg.tableau.n_vars();
        let mut relu_of_var = vec![Vec::new(); n];
        for (k, r) in query.relus.iter().enumerate() {
            relu_of_var[r.b.0].push(k);
            relu_of_var[r.f.0].push(k);
        }
        Self {
            cfg,
            relus: query.relus.clone(),
            relu_of_var,
            opts,
            lemmas: Vec::new(),
            observer: None,
            stats: EngineStats::default(),
            order: (0..n).map(VarId).collect(),
            rank: (0..n).collect(),
        }
    }

    /// Replaces the lowest-index-first order used by every rule. `order`
    /// lists the variables that come first; the rest follow by index.
    /// Any fixed order keeps Bland's anti-cycling guarantee.
    pub fn set_priority(&mut self, order: &[VarId]) {
        let n = self.cfg.tableau.n_vars();
        let mut seen = vec![false; n];
        let mut full = Vec::with_capacity(n);
        for v in order.iter().chain((0..n).map(VarId).collect::<Vec<_>>().iter()) {
            if v.0 < n && !seen[v.0] {
                seen[v.0] = true;
                full.push(*v);
            }
        }
        self.rank = vec![0; n];
        for (k, v) in full.iter().enumerate() {
            self.rank[v.0] = k;
        }
        self.order = full;
    }

    pub fn with_observer(mut self, observer: Arc<dyn TightenObserver<S>>) -> Self {
        self.observer = Some(observer);
        self
    }

    pub fn set_observer(&mut self, observer: Option<Arc<dyn TightenObserver<S>>>) {
        self.observer = observer;
    }

    pub fn options(&self) -> &EngineOptions {
        &self.opts
    }

    pub fn stats(&self) -> EngineStats {
        self.stats
    }

    pub fn bounds(&self) -> &BoundProfile<S> {
        &self.cfg.bounds
    }

    pub fn relus(&self) -> &[ReluPair] {
        &self.relus
    }

    pub fn alpha(&self) -> &Assignment<S> {
        &self.cfg.alpha
    }

    /// Lemmas emitted since the last call.
    pub fn take_lemmas(&mut self) -> Vec<Lemma<S>> {
        std::mem::take(&mut self.lemmas)
    }

    fn eps(&self) -> f64 {
        if S::EXACT {
            0.0
        } else {
            self.opts.epsilon
        }
    }

    /// Appends a ground equation with its own fixed slack.
    pub fn add_equation(&mut self, eq: &Equation<S>) -> VarId {
        let s = self.cfg.add_equation(eq);
        self.relu_of_var.push(Vec::new());
        self.rank.push(self.order.len());
        self.order.push(s);
        s
    }

    /// Tightens a ground bound (no-op unless tighter).
    pub fn tighten_ground(&mut self, v: VarId, side: Side, value: &S) -> bool {
        self.cfg.bounds.tighten_ground(v, side, value)
    }

    fn below(&self, v: VarId) -> bool {
        self.cfg.bounds.dynamic(v, Side::Lower).cmp_scalar(self.cfg.alpha.get(v), self.eps()) == Ordering::Greater
    }

    fn above(&self, v: VarId) -> bool {
        self.cfg.bounds.dynamic(v, Side::Upper).cmp_scalar(self.cfg.alpha.get(v), self.eps()) == Ordering::Less
    }

    fn after_bound_change(&mut self, v: VarId) {
        let touched = self.relu_of_var[v.0].clone();
        for k in touched {
            let lemmas = relu_propagate(k, self.relus[k], &self.cfg.tableau, &mut self.cfg.bounds, self.opts.epsilon);
            for l in lemmas {
                if let Some(obs) = &self.observer {
                    obs.on_lemma(&l, self.cfg.tableau.initial_rows(), &self.cfg.bounds);
                }
                self.stats.lemmas += 1;
                if self.opts.produce_proofs {
                    self.lemmas.push(l);
                }
            }
        }
    }

    /// Interval propagation of one tableau row onto `target`, reported to
    /// the observer. Returns whether the bound improved.
    pub fn tighten_row(&mut self, row: usize, target: VarId, side: Side) -> bool {
        let Some(rec) = tighten_from_row(&self.cfg.tableau, &mut self.cfg.bounds, row, target, side, self.opts.epsilon) else {
            return false;
        };
        self.stats.tightenings += 1;
        if let Some(obs) = &self.observer {
            obs.on_tighten(&rec, self.cfg.tableau.initial_rows(), &self.cfg.bounds);
        }
        true
    }

    /// Applies exactly one derivation rule.
    pub fn step(&mut self) -> Result<StepResult<S>, EngineError> {
        self.stats.steps += 1;
        let eps = self.eps();
        let order = std::mem::take(&mut self.order);
        let result = self.step_in_order(&order, eps);
        self.order = order;
        result
    }

    fn step_in_order(&mut self, order: &[VarId], eps: f64) -> Result<StepResult<S>, EngineError> {

        // Failure₂: clashing bounds.
        for &v in order {
            let b = &self.cfg.bounds;
            if b.dynamic(v, Side::Lower).cmp_tol(b.dynamic(v, Side::Upper), eps) == Ordering::Greater {
                return Ok(StepResult::Terminal(Verdict::Unsat(contradiction_of(v, b))));
            }
        }

        // Failure₁: a violated basic variable that no non-basic can repair.
        let mut pivot_candidate = None;
        for &v in order {
            let Some(row) = self.cfg.tableau.row_of(v) else {
                continue;
            };
            let (low, high) = (self.below(v), self.above(v));
            if !low && !high {
                continue;
            }
            let (plus, minus) = slack_sets(&self.cfg.tableau, &self.cfg.bounds, &self.cfg.alpha, v, eps)?;
            let repair = if low { plus } else { minus };
            if repair.is_empty() {
                // The row itself bounds v on the other side past the violated bound.
                let side = if low { Side::Upper } else { Side::Lower };
                self.tighten_row(row, v, side);
                return Ok(StepResult::Terminal(Verdict::Unsat(contradiction_of(v, &self.cfg.bounds))));
            }
            if pivot_candidate.is_none() {
                let entering = *repair.iter().min_by_key(|j| self.rank[j.0]).expect("nonempty");
                pivot_candidate = Some((v, entering));
            }
        }

        // Success.
        let out_of_bounds = order.iter().copied().find(|v| !self.cfg.tableau.is_basic(*v) && (self.below(*v) || self.above(*v)));
        if pivot_candidate.is_none() && out_of_bounds.is_none() {
            return Ok(StepResult::Terminal(Verdict::Sat(self.cfg.alpha.clone())));
        }

        // Update: move a non-basic variable to its violated bound.
        if let Some(v) = out_of_bounds {
            let side = if self.below(v) { Side::Lower } else { Side::Upper };
            let target = self.cfg.bounds.dynamic(v, side).finite().cloned().ok_or(EngineError::NoRuleApplicable)?;
            let delta = target.sub(self.cfg.alpha.get(v));
            update_assignment(&self.cfg.tableau, &mut self.cfg.alpha, v, &delta)?;
            self.cfg.alpha.values[v.0] = target;
            self.stats.updates += 1;
            return Ok(StepResult::Continue);
        }

        // Pivot.
        let (leaving, entering) = pivot_candidate.ok_or(EngineError::NoRuleApplicable)?;
        let row = self.cfg.tableau.row_of(leaving).ok_or(LpError::NotBasic(leaving))?;
        self.cfg.tableau.pivot(leaving, entering)?;
        self.stats.pivots += 1;
        let mut changed = false;
        for side in [Side::Lower, Side::Upper] {
            changed |= self.tighten_row(row, entering, side);
        }
        if changed {
            self.after_bound_change(entering);
        }
        Ok(StepResult::Continue)
    }

    pub fn solve(&mut self) -> Result<Verdict<S>, EngineError> {
        let mut iters = 0u64;
        loop {
            if iters >= self.opts.max_iters {
                return Err(EngineError::IterationLimit(self.opts.max_iters));
            }
            iters += 1;
            if let StepResult::Terminal(v) = self.step()? {
                return Ok(v);
            }
        }
    }

    /// Upper bound of `wᵀ·A₀` under the current ground bounds.
    pub fn farkas_upper(&self, w: &[S]) -> ExtendedScalar<S> {
        let r = self.cfg.tableau.combine_initial(w);
        self.cfg.bounds.row_extreme(&r, Side::Upper, BoundKind::Ground)
    }
}
