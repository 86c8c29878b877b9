//! Tableau representation and the primitive operations of the abstract
//! Simplex calculus.
//!
//! Every LP is normalized to `A·V = 0`. Each input equation `c·x = d` gets
//! a fresh slack `s` with `l(s) = u(s) = -d`, so the initial tableau has the
//! form `[C | I]` and the slack entries of any later row are exactly that
//! row's coordinates with respect to the initial rows.
//!
//! Rows are stored with the basic variable's coefficient equal to one, so a
//! row `x_i + Σ r_j x_j = 0` stands for the tableau equation
//! `x_i = Σ (-r_j) x_j`.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{ExtendedScalar, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VarId(pub usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// Which bound of a variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Lower,
    Upper,
}

impl Side {
    pub fn flip(self) -> Side {
        match self {
            Side::Lower => Side::Upper,
            Side::Upper => Side::Lower,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Lower => "lower",
            Side::Upper => "upper",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LpError {
    #[error("pivot on zero coefficient of {entering} in the row of {leaving}")]
    PivotOnZero { leaving: VarId, entering: VarId },
    #[error("{0} is not basic")]
    NotBasic(VarId),
    #[error("{0} is already basic")]
    AlreadyBasic(VarId),
    #[error("variable {0} out of range")]
    UnknownVar(VarId),
}

/// A linear equation `Σ terms = rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Equation<S> {
    pub terms: Vec<(VarId, S)>,
    pub rhs: S,
}

impl<S: Scalar> Equation<S> {
    pub fn new(terms: Vec<(VarId, S)>, rhs: S) -> Self {
        Self { terms, rhs }
    }

    /// Dense coefficient vector of width `n`; repeated variables accumulate.
    pub fn dense(&self, n: usize) -> Vec<S> {
        let mut row = vec![S::zero(); n];
        for (v, c) in &self.terms {
            row[v.0] = row[v.0].add(c);
        }
        row
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(&S) -> T) -> Equation<T> {
        Equation {
            terms: self.terms.iter().map(|(v, c)| (*v, f(c))).collect(),
            rhs: f(&self.rhs),
        }
    }
}

/// The `(b, f)` variables of one `f = ReLU(b)` constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReluPair {
    pub b: VarId,
    pub f: VarId,
}

/// An LP instance over `n` variables with its ReLU side constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct Query<S> {
    pub var_names: Vec<String>,
    pub equations: Vec<Equation<S>>,
    pub lower: Vec<ExtendedScalar<S>>,
    pub upper: Vec<ExtendedScalar<S>>,
    pub relus: Vec<ReluPair>,
    pub inputs: Vec<VarId>,
    pub outputs: Vec<VarId>,
}

impl<S: Scalar> Query<S> {
    pub fn n_vars(&self) -> usize {
        self.var_names.len()
    }

    pub fn var_by_name(&self, name: &str) -> Option<VarId> {
        self.var_names.iter().position(|n| n == name).map(VarId)
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(&S) -> T) -> Query<T> {
        Query {
            var_names: self.var_names.clone(),
            equations: self.equations.iter().map(|e| e.map(&f)).collect(),
            lower: self.lower.iter().map(|b| b.map(&f)).collect(),
            upper: self.upper.iter().map(|b| b.map(&f)).collect(),
            relus: self.relus.clone(),
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
        }
    }

    /// Structural problems that make the query unusable.
    pub fn validate(&self) -> Result<(), String> {
        let n = self.n_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(format!("bound vectors must have length {n}"));
        }
        for (k, e) in self.equations.iter().enumerate() {
            if let Some((v, _)) = e.terms.iter().find(|(v, _)| v.0 >= n) {
                return Err(format!("equation {k} references unknown variable {v}"));
            }
        }
        for (k, r) in self.relus.iter().enumerate() {
            if r.b.0 >= n || r.f.0 >= n || r.b == r.f {
                return Err(format!("relu {k} has invalid variables"));
            }
        }
        for v in self.inputs.iter().chain(&self.outputs) {
            if v.0 >= n {
                return Err(format!("io variable {v} out of range"));
            }
        }
        for (v, u) in self.upper.iter().enumerate() {
            if *u == ExtendedScalar::NegInf || self.lower[v] == ExtendedScalar::PosInf {
                return Err(format!("variable {v} has an empty infinite bound"));
            }
        }
        Ok(())
    }
}

/// Tableau `A·V = 0` with one basic variable per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Tableau<S> {
    rows: Vec<Vec<S>>,
    basic: Vec<VarId>,
    basic_row: Vec<Option<usize>>,
    slack_of_row: Vec<VarId>,
    initial: Vec<Vec<S>>,
}

impl<S: Scalar> Tableau<S> {
    /// Tableau with `n` variables and no rows.
    pub fn empty(n: usize) -> Self {
        Self {
            rows: Vec::new(),
            basic: Vec::new(),
            basic_row: vec![None; n],
            slack_of_row: Vec::new(),
            initial: Vec::new(),
        }
    }

    /// Rebuilds a tableau from already-augmented initial rows whose
    /// `slacks[k]` column is the unit vector `e_k`.
    pub fn from_initial_rows(rows: Vec<Vec<S>>, slacks: Vec<VarId>) -> Result<Self, LpError> {
        let n = rows.first().map_or(0, |r| r.len());
        let mut basic_row = vec![None; n];
        for (k, s) in slacks.iter().enumerate() {
            if s.0 >= n {
                return Err(LpError::UnknownVar(*s));
            }
            for (i, row) in rows.iter().enumerate() {
                let want = if i == k { S::one() } else { S::zero() };
                if row[s.0] != want {
                    return Err(LpError::PivotOnZero {
                        leaving: *s,
                        entering: *s,
                    });
                }
            }
            basic_row[s.0] = Some(k);
        }
        Ok(Self {
            initial: rows.clone(),
            rows,
            basic: slacks.clone(),
            basic_row,
            slack_of_row: slacks,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.basic_row.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, k: usize) -> &[S] {
        &self.rows[k]
    }

    pub fn rows(&self) -> &[Vec<S>] {
        &self.rows
    }

    /// Rows of the initial (augmented) tableau `A₀`.
    pub fn initial_rows(&self) -> &[Vec<S>] {
        &self.initial
    }

    pub fn basic(&self) -> &[VarId] {
        &self.basic
    }

    pub fn slack_of_row(&self) -> &[VarId] {
        &self.slack_of_row
    }

    pub fn is_basic(&self, v: VarId) -> bool {
        self.basic_row[v.0].is_some()
    }

    pub fn row_of(&self, v: VarId) -> Option<usize> {
        self.basic_row[v.0]
    }

    /// `A_{i,j}`: coefficient of `x_j` in the equation `x_i = Σ c_j x_j` of
    /// the row whose basic variable is `x_i`.
    pub fn coefficient(&self, row: usize, j: VarId) -> S {
        self.rows[row][j.0].neg()
    }

    /// Adds a variable column with zero coefficients everywhere.
    pub fn add_column(&mut self) -> VarId {
        for r in self.rows.iter_mut().chain(self.initial.iter_mut()) {
            r.push(S::zero());
        }
        self.basic_row.push(None);
        VarId(self.basic_row.len() - 1)
    }

    /// Appends `coeffs·x + s = 0` with a fresh basic slack `s`, expressed
    /// over the current non-basic variables. Returns `s`.
    pub fn append_row(&mut self, coeffs: &[S]) -> VarId {
        let s = self.add_column();
        let n = self.n_vars();
        let mut init = coeffs.to_vec();
        init.resize(n, S::zero());
        init[s.0] = S::one();
        let mut live = init.clone();
        for (k, b) in self.basic.iter().enumerate() {
            let c = live[b.0].clone();
            if c.is_zero() {
                continue;
            }
            for (dst, src) in live.iter_mut().zip(&self.rows[k]) {
                if !src.is_zero() {
                    *dst = dst.sub(&c.mul(src)).snap();
                }
            }
            live[b.0] = S::zero();
        }
        self.initial.push(init);
        self.rows.push(live);
        self.basic.push(s);
        self.slack_of_row.push(s);
        self.basic_row[s.0] = Some(self.rows.len() - 1);
        s
    }

    /// Swaps basic `leaving` with non-basic `entering`.
    pub fn pivot(&mut self, leaving: VarId, entering: VarId) -> Result<(), LpError> {
        let r = self.row_of(leaving).ok_or(LpError::NotBasic(leaving))?;
        if self.is_basic(entering) {
            return Err(LpError::AlreadyBasic(entering));
        }
        let pivot = self.rows[r][entering.0].clone();
        if pivot.is_zero() {
            return Err(LpError::PivotOnZero { leaving, entering });
        }
        let inv = S::one().div(&pivot);
        for x in self.rows[r].iter_mut() {
            if !x.is_zero() {
                *x = x.mul(&inv).snap();
            }
        }
        self.rows[r][entering.0] = S::one();
        let pivot_row = self.rows[r].clone();
        for (k, row) in self.rows.iter_mut().enumerate() {
            if k == r {
                continue;
            }
            let c = row[entering.0].clone();
            if c.is_zero() {
                continue;
            }
            for (dst, src) in row.iter_mut().zip(&pivot_row) {
                if !src.is_zero() {
                    *dst = dst.sub(&c.mul(src)).snap();
                }
            }
            row[entering.0] = S::zero();
        }
        self.basic[r] = entering;
        self.basic_row[leaving.0] = None;
        self.basic_row[entering.0] = Some(r);
        Ok(())
    }

    /// `coef(e)` of row `k`: its entries on the slack columns, which satisfy
    /// `coef(e)ᵀ·A₀ = e`.
    pub fn extract_coef(&self, k: usize) -> Vec<S> {
        self.slack_of_row
            .iter()
            .map(|s| self.rows[k][s.0].clone())
            .collect()
    }

    /// `wᵀ·A₀`.
    pub fn combine_initial(&self, w: &[S]) -> Vec<S> {
        combine_rows(&self.initial, w, self.n_vars())
    }
}

/// `Σ w_k · rows[k]`, using only multiplication and addition.
pub fn combine_rows<S: Scalar>(rows: &[Vec<S>], w: &[S], n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); n];
    for (row, wk) in rows.iter().zip(w) {
        if wk.is_zero() {
            continue;
        }
        for (dst, a) in out.iter_mut().zip(row) {
            if !a.is_zero() {
                *dst = dst.add(&wk.mul(a));
            }
        }
    }
    out
}

/// Builds the initial tableau for `equations` over `n` variables. Slack `k`
/// is variable `n + k`; its fixed bound `-rhs_k` is returned alongside.
pub fn augment_with_slacks<S: Scalar>(
    equations: &[Equation<S>],
    n: usize,
) -> (Tableau<S>, Vec<S>) {
    let m = equations.len();
    let width = n + m;
    let mut rows = Vec::with_capacity(m);
    let mut slacks = Vec::with_capacity(m);
    let mut fixed = Vec::with_capacity(m);
    for (k, e) in equations.iter().enumerate() {
        let mut row = e.dense(width);
        row[n + k] = S::one();
        rows.push(row);
        slacks.push(VarId(n + k));
        fixed.push(e.rhs.neg());
    }
    let tableau = if m == 0 {
        Tableau::empty(n)
    } else {
        Tableau::from_initial_rows(rows, slacks).expect("identity tail by construction")
    };
    (tableau, fixed)
}

/// Variable assignment `α`.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment<S> {
    pub values: Vec<S>,
}

impl<S: Scalar> Assignment<S> {
    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![S::zero(); n],
        }
    }

    pub fn get(&self, v: VarId) -> &S {
        &self.values[v.0]
    }

    /// Residuals `A·α` for every current row.
    pub fn residuals(&self, t: &Tableau<S>) -> Vec<S> {
        t.rows()
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&self.values)
                    .fold(S::zero(), |acc, (a, x)| acc.add(&a.mul(x)))
            })
            .collect()
    }
}

/// `update(α, x_j, δ)`: shift non-basic `x_j` by `δ` and every basic
/// variable by `δ·A_{i,j}`.
pub fn update_assignment<S: Scalar>(
    t: &Tableau<S>,
    alpha: &mut Assignment<S>,
    j: VarId,
    delta: &S,
) -> Result<(), LpError> {
    if t.is_basic(j) {
        return Err(LpError::AlreadyBasic(j));
    }
    if delta.is_zero() {
        return Ok(());
    }
    alpha.values[j.0] = alpha.values[j.0].add(delta);
    for (k, b) in t.basic().iter().enumerate() {
        let a = &t.row(k)[j.0];
        if !a.is_zero() {
            alpha.values[b.0] = alpha.values[b.0].sub(&delta.mul(a));
        }
    }
    Ok(())
}

/// Ground and dynamic bounds with their Farkas explanations.
///
/// `f_lower[v]` and `f_upper[v]` are length-`m` vectors over the initial
/// rows; the zero vector explains exactly the ground bound.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundProfile<S> {
    pub ground_lower: Vec<ExtendedScalar<S>>,
    pub ground_upper: Vec<ExtendedScalar<S>>,
    pub dyn_lower: Vec<ExtendedScalar<S>>,
    pub dyn_upper: Vec<ExtendedScalar<S>>,
    pub f_lower: Vec<Vec<S>>,
    pub f_upper: Vec<Vec<S>>,
    m: usize,
    tracked: bool,
}

impl<S: Scalar> BoundProfile<S> {
    pub fn new(lower: Vec<ExtendedScalar<S>>, upper: Vec<ExtendedScalar<S>>, m: usize) -> Self {
        let n = lower.len();
        assert_eq!(n, upper.len());
        Self {
            dyn_lower: lower.clone(),
            dyn_upper: upper.clone(),
            ground_lower: lower,
            ground_upper: upper,
            f_lower: vec![vec![S::zero(); m]; n],
            f_upper: vec![vec![S::zero(); m]; n],
            m,
            tracked: true,
        }
    }

    /// Same bounds without Farkas bookkeeping: every explanation is empty.
    pub fn untracked(lower: Vec<ExtendedScalar<S>>, upper: Vec<ExtendedScalar<S>>, m: usize) -> Self {
        let n = lower.len();
        let mut p = Self::new(lower, upper, 0);
        p.m = m;
        p.tracked = false;
        p.f_lower = vec![Vec::new(); n];
        p.f_upper = vec![Vec::new(); n];
        p
    }

    pub fn is_tracked(&self) -> bool {
        self.tracked
    }

    /// The explanation of a ground bound.
    pub fn zero_farkas(&self) -> Vec<S> {
        if self.tracked {
            vec![S::zero(); self.m]
        } else {
            Vec::new()
        }
    }

    pub fn n_vars(&self) -> usize {
        self.ground_lower.len()
    }

    pub fn n_rows(&self) -> usize {
        self.m
    }

    pub fn push_var(&mut self, lower: ExtendedScalar<S>, upper: ExtendedScalar<S>) {
        self.ground_lower.push(lower.clone());
        self.dyn_lower.push(lower);
        self.ground_upper.push(upper.clone());
        self.dyn_upper.push(upper);
        self.f_lower.push(self.zero_farkas());
        self.f_upper.push(self.zero_farkas());
    }

    /// Zero-extends every explanation for one more tableau row.
    pub fn push_row(&mut self) {
        self.m += 1;
        if !self.tracked {
            return;
        }
        for f in self.f_lower.iter_mut().chain(self.f_upper.iter_mut()) {
            f.push(S::zero());
        }
    }

    pub fn ground(&self, v: VarId, side: Side) -> &ExtendedScalar<S> {
        match side {
            Side::Lower => &self.ground_lower[v.0],
            Side::Upper => &self.ground_upper[v.0],
        }
    }

    pub fn dynamic(&self, v: VarId, side: Side) -> &ExtendedScalar<S> {
        match side {
            Side::Lower => &self.dyn_lower[v.0],
            Side::Upper => &self.dyn_upper[v.0],
        }
    }

    pub fn farkas(&self, v: VarId, side: Side) -> &[S] {
        match side {
            Side::Lower => &self.f_lower[v.0],
            Side::Upper => &self.f_upper[v.0],
        }
    }

    pub fn set_dynamic(&mut self, v: VarId, side: Side, bound: ExtendedScalar<S>, farkas: Vec<S>) {
        debug_assert_eq!(farkas.len(), if self.tracked { self.m } else { 0 });
        match side {
            Side::Lower => {
                self.dyn_lower[v.0] = bound;
                self.f_lower[v.0] = farkas;
            }
            Side::Upper => {
                self.dyn_upper[v.0] = bound;
                self.f_upper[v.0] = farkas;
            }
        }
    }

    /// Installs `value` as a ground bound if it tightens the current one.
    /// The dynamic bound follows with a zero explanation unless it is
    /// already at least as tight. Returns whether the ground bound changed.
    pub fn tighten_ground(&mut self, v: VarId, side: Side, value: &S) -> bool {
        let new = ExtendedScalar::Finite(value.clone());
        let tighter = |cur: &ExtendedScalar<S>| match side {
            Side::Lower => new.cmp_exact(cur) == Ordering::Greater,
            Side::Upper => new.cmp_exact(cur) == Ordering::Less,
        };
        if !tighter(self.ground(v, side)) {
            return false;
        }
        let follow = tighter(self.dynamic(v, side)) || self.dynamic(v, side) == &new;
        match side {
            Side::Lower => self.ground_lower[v.0] = new.clone(),
            Side::Upper => self.ground_upper[v.0] = new.clone(),
        }
        if follow {
            let zero = self.zero_farkas();
            self.set_dynamic(v, side, new, zero);
        }
        true
    }

    pub fn ground_lower(&self) -> &[ExtendedScalar<S>] {
        &self.ground_lower
    }

    pub fn ground_upper(&self) -> &[ExtendedScalar<S>] {
        &self.ground_upper
    }
}

/// Simplex configuration `⟨B, A, l, u, α⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexConfig<S> {
    pub tableau: Tableau<S>,
    pub bounds: BoundProfile<S>,
    pub alpha: Assignment<S>,
}

impl<S: Scalar> SimplexConfig<S> {
    /// Initial configuration for `query`: augmented tableau, slack bounds
    /// fixed to `-rhs`, zero assignment.
    pub fn from_query(query: &Query<S>) -> Self {
        Self::build(query, true)
    }

    /// `from_query` without Farkas bookkeeping.
    pub fn from_query_untracked(query: &Query<S>) -> Self {
        Self::build(query, false)
    }

    fn build(query: &Query<S>, tracked: bool) -> Self {
        let n = query.n_vars();
        let (tableau, fixed) = augment_with_slacks(&query.equations, n);
        let m = fixed.len();
        let mut lower = query.lower.clone();
        let mut upper = query.upper.clone();
        for v in fixed {
            lower.push(ExtendedScalar::Finite(v.clone()));
            upper.push(ExtendedScalar::Finite(v));
        }
        let bounds = if tracked {
            BoundProfile::new(lower, upper, m)
        } else {
            BoundProfile::untracked(lower, upper, m)
        };
        let alpha = Assignment::zeros(n + m);
        Self {
            tableau,
            bounds,
            alpha,
        }
    }

    /// Appends `coeffs·x = rhs` as a new row with its own fixed slack.
    pub fn add_equation(&mut self, eq: &Equation<S>) -> VarId {
        let coeffs = eq.dense(self.tableau.n_vars());
        let s = self.tableau.append_row(&coeffs);
        let fixed = ExtendedScalar::Finite(eq.rhs.neg());
        self.bounds.push_row();
        self.bounds.push_var(fixed.clone(), fixed);
        let k = self.tableau.n_rows() - 1;
        let value = self
            .tableau
            .row(k)
            .iter()
            .zip(&self.alpha.values)
            .fold(S::zero(), |acc, (a, x)| acc.sub(&a.mul(x)));
        self.alpha.values.push(value);
        s
    }
}

/// `slack⁺(x_i)` and `slack⁻(x_i)` under the dynamic bounds.
pub fn slack_sets<S: Scalar>(
    t: &Tableau<S>,
    bounds: &BoundProfile<S>,
    alpha: &Assignment<S>,
    i: VarId,
    eps: f64,
) -> Result<(Vec<VarId>, Vec<VarId>), LpError> {
    let r = t.row_of(i).ok_or(LpError::NotBasic(i))?;
    let mut plus = Vec::new();
    let mut minus = Vec::new();
    for j in 0..t.n_vars() {
        let v = VarId(j);
        if t.is_basic(v) {
            continue;
        }
        let a = t.coefficient(r, v);
        let below_upper =
            bounds.dynamic(v, Side::Upper).cmp_scalar(alpha.get(v), eps) == Ordering::Greater;
        let above_lower =
            bounds.dynamic(v, Side::Lower).cmp_scalar(alpha.get(v), eps) == Ordering::Less;
        match a.sign() {
            Ordering::Greater => {
                if below_upper {
                    plus.push(v);
                }
                if above_lower {
                    minus.push(v);
                }
            }
            Ordering::Less => {
                if above_lower {
                    plus.push(v);
                }
                if below_upper {
                    minus.push(v);
                }
            }
            Ordering::Equal => {}
        }
    }
    Ok((plus, minus))
}

/// Extreme value of `Σ c_j x_j` over the box `[lower, upper]`.
pub fn row_extreme<S: Scalar>(
    coeffs: &[S],
    lower: &[ExtendedScalar<S>],
    upper: &[ExtendedScalar<S>],
    which: Side,
) -> ExtendedScalar<S> {
    let mut acc = ExtendedScalar::Finite(S::zero());
    for (j, c) in coeffs.iter().enumerate() {
        let pick = match (c.sign(), which) {
            (Ordering::Equal, _) => continue,
            (Ordering::Greater, Side::Upper) | (Ordering::Less, Side::Lower) => &upper[j],
            _ => &lower[j],
        };
        acc = acc.add_scaled(c, pick);
        let saturated = match which {
            Side::Upper => acc == ExtendedScalar::PosInf,
            Side::Lower => acc == ExtendedScalar::NegInf,
        };
        if saturated {
            return acc;
        }
    }
    acc
}

/// Which set of bounds to evaluate against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    Ground,
    Dynamic,
}

impl<S: Scalar> BoundProfile<S> {
    pub fn row_extreme(&self, coeffs: &[S], which: Side, kind: BoundKind) -> ExtendedScalar<S> {
        match kind {
            BoundKind::Ground => row_extreme(coeffs, &self.ground_lower, &self.ground_upper, which),
            BoundKind::Dynamic => row_extreme(coeffs, &self.dyn_lower, &self.dyn_upper, which),
        }
    }
}
