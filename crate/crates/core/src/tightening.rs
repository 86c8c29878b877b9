//! Bound tightening by interval propagation over tableau rows and by the
//! ReLU rules, keeping a Farkas explanation for every dynamic bound.
//!
//! The explanation `f` of a bound on `x` certifies it as follows: the row
//! `r = fᵀ·A₀` is a valid equation `r·V = 0`, hence `x = (r + e_x)·V`, and
//! bounding the right-hand side with ground bounds alone yields the bound.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp_core::{combine_rows, row_extreme, BoundProfile, ReluPair, Side, Tableau, VarId};
use crate::scalar::{ExtendedScalar, Scalar};

/// A dynamic bound derived from a tableau row.
#[derive(Debug, Clone, PartialEq)]
pub struct TightenRecord<S> {
    pub var: VarId,
    pub which: Side,
    pub new_bound: S,
    /// Farkas vector over the initial rows; empty when proofs are off.
    pub explanation: Vec<S>,
}

/// The ReLU tightening rules for `f = max(b, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReluRule {
    /// `l(f) > 0` gives `l(b) := l(f)`.
    R1,
    /// `l(b) > 0` gives `l(f) := l(b)`.
    R2,
    /// `u(b) := u(f)`.
    R3,
    /// `u(b) ≤ 0` gives `u(f) := 0`.
    R4,
    /// `u(b) > 0` gives `u(f) := u(b)`.
    R5,
}

impl ReluRule {
    pub const ALL: [ReluRule; 5] = [ReluRule::R1, ReluRule::R2, ReluRule::R3, ReluRule::R4, ReluRule::R5];

    /// `(antecedent is on f, antecedent side, conclusion is on f, conclusion side)`.
    pub fn shape(self) -> (bool, Side, bool, Side) {
        match self {
            ReluRule::R1 => (true, Side::Lower, false, Side::Lower),
            ReluRule::R2 => (false, Side::Lower, true, Side::Lower),
            ReluRule::R3 => (true, Side::Upper, false, Side::Upper),
            ReluRule::R4 => (false, Side::Upper, true, Side::Upper),
            ReluRule::R5 => (false, Side::Upper, true, Side::Upper),
        }
    }

    pub fn antecedent(self, relu: ReluPair) -> (VarId, Side) {
        let (on_f, side, _, _) = self.shape();
        (if on_f { relu.f } else { relu.b }, side)
    }

    pub fn target(self, relu: ReluPair) -> (VarId, Side) {
        let (_, _, on_f, side) = self.shape();
        (if on_f { relu.f } else { relu.b }, side)
    }

    /// Whether the premise holds for antecedent value `a`.
    pub fn premise<S: Scalar>(self, a: &ExtendedScalar<S>) -> bool {
        let zero = ExtendedScalar::Finite(S::zero());
        match self {
            ReluRule::R1 | ReluRule::R2 | ReluRule::R5 => a.cmp_exact(&zero) == Ordering::Greater,
            ReluRule::R3 => true,
            ReluRule::R4 => a.cmp_exact(&zero) != Ordering::Greater,
        }
    }

    /// The concluded bound for antecedent value `a` (premise assumed).
    pub fn conclude<S: Scalar>(self, a: &ExtendedScalar<S>) -> ExtendedScalar<S> {
        match self {
            ReluRule::R4 => ExtendedScalar::Finite(S::zero()),
            _ => a.clone(),
        }
    }

    /// Whether `conclusion` is implied by the antecedent value `a`. Lower
    /// conclusions may be weaker than `a`; upper ones may be larger.
    pub fn implies<S: Scalar>(self, a: &ExtendedScalar<S>, conclusion: &S) -> bool {
        let c = ExtendedScalar::Finite(conclusion.clone());
        match self {
            ReluRule::R1 | ReluRule::R2 => self.premise(a) && c.cmp_exact(a) != Ordering::Greater,
            ReluRule::R3 => c.cmp_exact(a) != Ordering::Less,
            // Both upper rules on f reduce to `u(f) ≥ max(u(b), 0)`.
            ReluRule::R4 | ReluRule::R5 => {
                let zero = ExtendedScalar::Finite(S::zero());
                let floor = if a.cmp_exact(&zero) == Ordering::Greater { a } else { &zero };
                c.cmp_exact(floor) != Ordering::Less
            }
        }
    }
}

impl fmt::Display for ReluRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for ReluRule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ReluRule::ALL
            .into_iter()
            .find(|r| r.to_string() == s)
            .ok_or_else(|| format!("unknown rule {s:?}"))
    }
}

/// A ReLU-derived bound, installed as a ground bound at its node.
#[derive(Debug, Clone, PartialEq)]
pub struct Lemma<S> {
    pub relu: usize,
    pub affected_var: VarId,
    pub which: Side,
    pub new_bound: S,
    pub rule: ReluRule,
    pub antecedent_var: VarId,
    pub antecedent_which: Side,
    /// Snapshot of the antecedent's Farkas vector at emission time.
    pub antecedent_explanation: Vec<S>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TightenError {
    #[error("explanation of the {which} bound of {var} reconstructs {reconstructed}, looser than the stored {stored}")]
    ExplanationMismatch {
        var: VarId,
        which: Side,
        reconstructed: String,
        stored: String,
    },
    #[error("explanation has length {got}, expected {expected}")]
    DimensionMismatch { got: usize, expected: usize },
}

/// Hook for watching every bound derivation as it happens.
pub trait TightenObserver<S>: Send + Sync {
    fn on_tighten(&self, record: &TightenRecord<S>, initial_rows: &[Vec<S>], bounds: &BoundProfile<S>);

    fn on_lemma(&self, _lemma: &Lemma<S>, _initial_rows: &[Vec<S>], _bounds: &BoundProfile<S>) {}
}

/// The bound on `var` implied by `farkas` against the ground bounds
/// `lower`/`upper`. Uses only addition, multiplication and comparison.
pub fn reconstruct_bound<S: Scalar>(
    initial_rows: &[Vec<S>],
    farkas: &[S],
    lower: &[ExtendedScalar<S>],
    upper: &[ExtendedScalar<S>],
    var: VarId,
    which: Side,
) -> ExtendedScalar<S> {
    let n = lower.len();
    let mut r = combine_rows(initial_rows, farkas, n);
    r[var.0] = r[var.0].add(&S::one());
    row_extreme(&r, lower, upper, which)
}

/// Re-derives the stored dynamic bound of `var` from its explanation.
pub fn verify_explanation<S: Scalar>(
    bounds: &BoundProfile<S>,
    t0: &Tableau<S>,
    var: VarId,
    which: Side,
) -> Result<ExtendedScalar<S>, TightenError> {
    let f = bounds.farkas(var, which);
    if f.len() != t0.initial_rows().len() {
        return Err(TightenError::DimensionMismatch {
            got: f.len(),
            expected: t0.initial_rows().len(),
        });
    }
    let rec = reconstruct_bound(
        t0.initial_rows(),
        f,
        bounds.ground_lower(),
        bounds.ground_upper(),
        var,
        which,
    );
    let stored = bounds.dynamic(var, which);
    let looser = match which {
        Side::Lower => rec.cmp_exact(stored) == Ordering::Less,
        Side::Upper => rec.cmp_exact(stored) == Ordering::Greater,
    };
    if looser {
        return Err(TightenError::ExplanationMismatch {
            var,
            which,
            reconstructed: rec.to_string(),
            stored: stored.to_string(),
        });
    }
    Ok(rec)
}

/// `candidate` improves on `current` on this side, by more than `eps` in
/// inexact arithmetic.
pub fn improves<S: Scalar>(candidate: &ExtendedScalar<S>, current: &ExtendedScalar<S>, which: Side, eps: f64) -> bool {
    let eps = if S::EXACT { 0.0 } else { eps };
    match which {
        Side::Lower => candidate.cmp_tol(current, eps) == Ordering::Greater,
        Side::Upper => candidate.cmp_tol(current, eps) == Ordering::Less,
    }
}

fn tighter_of<S: Scalar>(a: ExtendedScalar<S>, b: ExtendedScalar<S>, which: Side) -> ExtendedScalar<S> {
    let take_b = match which {
        Side::Lower => b.cmp_exact(&a) == Ordering::Greater,
        Side::Upper => b.cmp_exact(&a) == Ordering::Less,
    };
    if take_b {
        b
    } else {
        a
    }
}

/// Interval propagation of tableau row `row` onto `target`.
///
/// The row is read as `target = Σ c_j x_j` with `c = r / (-r_target)`. The
/// candidate bound comes from the current dynamic bounds; with proofs on,
/// the new explanation is `Σ c_j f(x_j) + coef(e)` and the recorded bound
/// is the tighter of the candidate and that explanation's reconstruction,
/// so the two always agree. Nothing changes unless the bound improves.
pub fn tighten_from_row<S: Scalar>(
    t: &Tableau<S>,
    bounds: &mut BoundProfile<S>,
    row: usize,
    target: VarId,
    which: Side,
    eps: f64,
) -> Option<TightenRecord<S>> {
    let r = t.row(row);
    let rt = &r[target.0];
    if rt.is_zero() {
        return None;
    }
    let scale = S::one().div(&rt.neg());
    let mut terms = Vec::new();
    let mut candidate = ExtendedScalar::Finite(S::zero());
    for (j, a) in r.iter().enumerate() {
        if j == target.0 || a.is_zero() {
            continue;
        }
        let c = a.mul(&scale);
        let side = if c.is_positive() { which } else { which.flip() };
        candidate = candidate.add_scaled(&c, bounds.dynamic(VarId(j), side));
        if !candidate.is_finite() {
            return None;
        }
        terms.push((j, c, side));
    }
    if !improves(&candidate, bounds.dynamic(target, which), which, eps) {
        return None;
    }
    let (bound, explanation) = if bounds.is_tracked() {
        let mut f: Vec<S> = t
            .slack_of_row()
            .iter()
            .map(|s| r[s.0].mul(&scale))
            .collect();
        for (j, c, side) in &terms {
            for (dst, x) in f.iter_mut().zip(bounds.farkas(VarId(*j), *side)) {
                if !x.is_zero() {
                    *dst = dst.add(&c.mul(x));
                }
            }
        }
        let f: Vec<S> = f.into_iter().map(Scalar::snap).collect();
        let rec = reconstruct_bound(
            t.initial_rows(),
            &f,
            bounds.ground_lower(),
            bounds.ground_upper(),
            target,
            which,
        );
        (tighter_of(candidate, rec, which), f)
    } else {
        (candidate, Vec::new())
    };
    if !improves(&bound, bounds.dynamic(target, which), which, eps) {
        return None;
    }
    let new_bound = bound.finite()?.clone();
    bounds.set_dynamic(target, which, bound, explanation.clone());
    Some(TightenRecord {
        var: target,
        which,
        new_bound,
        explanation,
    })
}

/// Applies every ReLU rule of `relu` that strictly tightens a dynamic
/// bound, installing each conclusion as a ground bound. Rules are retried
/// until none fires.
pub fn relu_propagate<S: Scalar>(
    relu_index: usize,
    relu: ReluPair,
    t0: &Tableau<S>,
    bounds: &mut BoundProfile<S>,
    eps: f64,
) -> Vec<Lemma<S>> {
    let mut out = Vec::new();
    loop {
        let mut fired = false;
        for rule in ReluRule::ALL {
            let (av, aside) = rule.antecedent(relu);
            let (tv, tside) = rule.target(relu);
            let dynamic = bounds.dynamic(av, aside).clone();
            if !rule.premise(&dynamic) {
                continue;
            }
            let concl = rule.conclude(&dynamic);
            if !concl.is_finite() || !improves(&concl, bounds.dynamic(tv, tside), tside, eps) {
                continue;
            }
            // Base the conclusion on what the explanation proves right now,
            // which may be tighter than the stored value.
            let snapshot = bounds.farkas(av, aside).to_vec();
            let antecedent = if bounds.is_tracked() {
                let rec = reconstruct_bound(
                    t0.initial_rows(),
                    &snapshot,
                    bounds.ground_lower(),
                    bounds.ground_upper(),
                    av,
                    aside,
                );
                tighter_of(dynamic, rec, aside)
            } else {
                dynamic
            };
            if !rule.premise(&antecedent) {
                continue;
            }
            let Some(value) = rule.conclude(&antecedent).finite().cloned() else {
                continue;
            };
            bounds.tighten_ground(tv, tside, &value);
            let zero = bounds.zero_farkas();
            bounds.set_dynamic(tv, tside, ExtendedScalar::Finite(value.clone()), zero);
            out.push(Lemma {
                relu: relu_index,
                affected_var: tv,
                which: tside,
                new_bound: value,
                rule,
                antecedent_var: av,
                antecedent_which: aside,
                antecedent_explanation: snapshot,
            });
            fired = true;
        }
        if !fired {
            return out;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp_core::{augment_with_slacks, Equation, SimplexConfig};
    use crate::scalar::{rat, Rational};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fin(s: &str) -> ExtendedScalar<Rational> {
        ExtendedScalar::Finite(rat(s))
    }

    fn eq(terms: &[(usize, &str)], rhs: &str) -> Equation<Rational> {
        Equation::new(terms.iter().map(|(v, c)| (VarId(*v), rat(c))).collect(), rat(rhs))
    }

    const X1: VarId = VarId(0);
    const X2: VarId = VarId(1);
    const B1: VarId = VarId(2);
    const F1: VarId = VarId(3);
    const B2: VarId = VarId(4);

    /// Both-active node: e1..e3 plus f1 = b1 and f2 = b2, bounds as listed
    /// with the split grounds l(b1) = l(b2) = 0.
    fn both_active() -> (Tableau<Rational>, BoundProfile<Rational>) {
        let eqs = vec![
            eq(&[(0, "1"), (1, "-1"), (2, "-1")], "0"),
            eq(&[(3, "-2"), (4, "-1")], "0"),
            eq(&[(5, "1"), (6, "-1")], "0"),
            eq(&[(2, "1"), (3, "-1")], "0"),
            eq(&[(4, "1"), (5, "-1")], "0"),
        ];
        let (t, fixed) = augment_with_slacks(&eqs, 7);
        let mut lower: Vec<_> = ["2", "-1", "0", "0", "0", "1/4", "1/4"].map(fin).to_vec();
        let mut upper: Vec<_> = ["3", "1", "1/2", "1/2", "1/2", "1/2", "1/2"].map(fin).to_vec();
        for v in fixed {
            lower.push(ExtendedScalar::Finite(v.clone()));
            upper.push(ExtendedScalar::Finite(v));
        }
        let b = BoundProfile::new(lower, upper, 5);
        (t, b)
    }

    fn v(xs: &[&str]) -> Vec<Rational> {
        xs.iter().map(|s| rat(s)).collect()
    }

    #[test]
    fn farkas_chain_matches_worked_example() {
        let (mut t, mut b) = both_active();
        // b1 = x1 - x2
        t.pivot(VarId(7), B1).unwrap();
        let r = tighten_from_row(&t, &mut b, t.row_of(B1).unwrap(), B1, Side::Lower, 0.0).unwrap();
        assert_eq!(r.new_bound, rat("1"));
        assert_eq!(b.farkas(B1, Side::Lower), v(&["1", "0", "0", "0", "0"]).as_slice());
        // The row of s4 has b1 substituted out: x1 - x2 + s1 - f1 + s4 = 0.
        let r = tighten_from_row(&t, &mut b, 3, F1, Side::Lower, 0.0).unwrap();
        assert_eq!(r.new_bound, rat("1"));
        assert_eq!(b.farkas(F1, Side::Lower), v(&["1", "0", "0", "1", "0"]).as_slice());
        // b2 = -2 f1, read from the row of s2 targeting b2.
        let r = tighten_from_row(&t, &mut b, 1, B2, Side::Upper, 0.0).unwrap();
        assert_eq!(r.new_bound, rat("-2"));
        assert_eq!(b.farkas(B2, Side::Upper), v(&["-2", "1", "0", "-2", "0"]).as_slice());
        for (var, side) in [(B1, Side::Lower), (F1, Side::Lower), (B2, Side::Upper)] {
            assert_eq!(&verify_explanation(&b, &t, var, side).unwrap(), b.dynamic(var, side));
        }
    }

    #[test]
    fn chain_on_untouched_tableau() {
        // Rows of the initial tableau read directly: e1 for b1, e4 for f1, e2 for b2.
        let (t, mut b) = both_active();
        tighten_from_row(&t, &mut b, 0, B1, Side::Lower, 0.0).unwrap();
        assert_eq!(b.farkas(B1, Side::Lower), v(&["1", "0", "0", "0", "0"]).as_slice());
        tighten_from_row(&t, &mut b, 3, F1, Side::Lower, 0.0).unwrap();
        assert_eq!(b.dynamic(F1, Side::Lower), &fin("1"));
        assert_eq!(b.farkas(F1, Side::Lower), v(&["1", "0", "0", "1", "0"]).as_slice());
        tighten_from_row(&t, &mut b, 1, B2, Side::Upper, 0.0).unwrap();
        assert_eq!(b.dynamic(B2, Side::Upper), &fin("-2"));
        assert_eq!(b.farkas(B2, Side::Upper), v(&["-2", "1", "0", "-2", "0"]).as_slice());
        // Reconstruction of f1's lower bound: row x1 - x2 over the grounds.
        let rec = verify_explanation(&b, &t, F1, Side::Lower).unwrap();
        assert_eq!(rec, fin("1"));
    }

    #[test]
    fn no_tightening_leaves_state_alone() {
        let (t, mut b) = both_active();
        let before = b.clone();
        // Upper of b1 from e1: u(x1) - l(x2) = 4, looser than 1/2.
        assert!(tighten_from_row(&t, &mut b, 0, B1, Side::Upper, 0.0).is_none());
        // x2 has no coefficient in e2.
        assert!(tighten_from_row(&t, &mut b, 1, X2, Side::Upper, 0.0).is_none());
        assert_eq!(b, before);
    }

    #[test]
    fn zero_explanation_reconstructs_ground() {
        let (t, b) = both_active();
        for j in 0..12 {
            for side in [Side::Lower, Side::Upper] {
                let rec = verify_explanation(&b, &t, VarId(j), side).unwrap();
                assert_eq!(&rec, b.ground(VarId(j), side));
            }
        }
    }

    #[test]
    fn mismatched_explanation_is_reported() {
        let (t, mut b) = both_active();
        b.set_dynamic(X1, Side::Lower, fin("5/2"), vec![Rational::zero(); 5]);
        assert!(matches!(
            verify_explanation(&b, &t, X1, Side::Lower),
            Err(TightenError::ExplanationMismatch { .. })
        ));
    }

    fn relu_bounds(lb: &str, ub: &str, lf: &str, uf: &str) -> (Tableau<Rational>, BoundProfile<Rational>) {
        let t = Tableau::empty(2);
        let b = BoundProfile::new(vec![fin(lb), fin(lf)], vec![fin(ub), fin(uf)], 0);
        (t, b)
    }

    const PAIR: ReluPair = ReluPair { b: VarId(0), f: VarId(1) };

    #[test]
    fn r3_from_upper_of_f() {
        let (t, mut b) = relu_bounds("-10", "7", "0", "5");
        let lemmas = relu_propagate(0, PAIR, &t, &mut b, 0.0);
        assert_eq!(lemmas.len(), 1);
        assert_eq!(lemmas[0].rule, ReluRule::R3);
        assert_eq!(lemmas[0].new_bound, rat("5"));
        assert_eq!(b.ground(VarId(0), Side::Upper), &fin("5"));
        assert_eq!(b.dynamic(VarId(0), Side::Upper), &fin("5"));
    }

    #[test]
    fn r4_on_nonpositive_b() {
        let (t, mut b) = relu_bounds("-3", "-1", "0", "9");
        let lemmas = relu_propagate(0, PAIR, &t, &mut b, 0.0);
        let r4 = lemmas.iter().find(|l| l.rule == ReluRule::R4).unwrap();
        assert_eq!(r4.new_bound, rat("0"));
        assert_eq!(r4.affected_var, VarId(1));
    }

    #[test]
    fn r2_needs_strictly_positive_premise() {
        let (t, mut b) = relu_bounds("0", "3", "0", "3");
        assert!(relu_propagate(0, PAIR, &t, &mut b, 0.0).is_empty());
        let (t, mut b) = relu_bounds("1", "3", "0", "3");
        let lemmas = relu_propagate(0, PAIR, &t, &mut b, 0.0);
        assert_eq!(lemmas[0].rule, ReluRule::R2);
        assert_eq!(b.ground(VarId(1), Side::Lower), &fin("1"));
    }

    #[test]
    fn r1_and_r5() {
        let (t, mut b) = relu_bounds("-4", "2", "1/2", "3");
        let lemmas = relu_propagate(0, PAIR, &t, &mut b, 0.0);
        let rules: Vec<_> = lemmas.iter().map(|l| l.rule).collect();
        assert!(rules.contains(&ReluRule::R1));
        assert!(rules.contains(&ReluRule::R5));
        assert_eq!(b.dynamic(VarId(0), Side::Lower), &fin("1/2"));
        assert_eq!(b.dynamic(VarId(1), Side::Upper), &fin("2"));
    }

    #[test]
    fn relu_conclusions_hold_on_the_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..300 {
            let x = |rng: &mut ChaCha8Rng| Rational::new(rng.gen_range(-12..=12), rng.gen_range(1..=4));
            let (mut lb, mut ub) = (x(&mut rng), x(&mut rng));
            if lb > ub {
                std::mem::swap(&mut lb, &mut ub);
            }
            let (mut lf, mut uf) = (x(&mut rng), x(&mut rng));
            if lf > uf {
                std::mem::swap(&mut lf, &mut uf);
            }
            let t = Tableau::empty(2);
            let mut b = BoundProfile::new(
                vec![lb.clone().into(), lf.clone().into()],
                vec![ub.clone().into(), uf.clone().into()],
                0,
            );
            let lemmas = relu_propagate(0, PAIR, &t, &mut b, 0.0);
            for _ in 0..30 {
                let bv = x(&mut rng);
                let fv = if bv > Rational::zero() { bv.clone() } else { Rational::zero() };
                let inside = lb <= bv && bv <= ub && lf <= fv && fv <= uf;
                if !inside {
                    continue;
                }
                for l in &lemmas {
                    let val = if l.affected_var == VarId(0) { &bv } else { &fv };
                    match l.which {
                        Side::Lower => assert!(val >= &l.new_bound, "{l:?}"),
                        Side::Upper => assert!(val <= &l.new_bound, "{l:?}"),
                    }
                }
            }
        }
    }

    #[test]
    fn implication_table() {
        let a = fin("2");
        assert!(ReluRule::R1.implies(&a, &rat("2")));
        assert!(ReluRule::R1.implies(&a, &rat("1")));
        assert!(!ReluRule::R1.implies(&a, &rat("3")));
        assert!(!ReluRule::R1.implies(&fin("0"), &rat("0")));
        assert!(ReluRule::R3.implies(&fin("5"), &rat("5")));
        assert!(!ReluRule::R3.implies(&fin("5"), &rat("4")));
        assert!(ReluRule::R4.implies(&fin("-1"), &rat("0")));
        assert!(!ReluRule::R4.implies(&fin("1"), &rat("0")));
        assert!(ReluRule::R5.implies(&fin("2"), &rat("2")));
        assert!(!ReluRule::R5.implies(&fin("2"), &rat("1")));
        assert_eq!("R4".parse::<ReluRule>(), Ok(ReluRule::R4));
        assert!("R6".parse::<ReluRule>().is_err());
    }

    /// Independent replay: keeps its own bound table and recomputes every
    /// explanation's row from scratch.
    #[test]
    fn random_chains_reconstruct_recorded_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut events = 0;
        for _ in 0..60 {
            let n = rng.gen_range(3..7);
            let m = rng.gen_range(2..5);
            let mut eqs = Vec::new();
            for _ in 0..m {
                let mut terms = Vec::new();
                for j in 0..n {
                    if rng.gen_bool(0.7) {
                        terms.push((VarId(j), Rational::new(rng.gen_range(-4..=4), rng.gen_range(1..=3))));
                    }
                }
                eqs.push(Equation::new(terms, Rational::new(rng.gen_range(-3..=3), 1)));
            }
            let q = crate::lp_core::Query {
                var_names: (0..n).map(|j| format!("x{j}")).collect(),
                equations: eqs,
                lower: (0..n).map(|_| fin(&rng.gen_range(-5..=0).to_string())).collect(),
                upper: (0..n).map(|_| fin(&rng.gen_range(0..=5).to_string())).collect(),
                relus: vec![],
                inputs: vec![],
                outputs: vec![],
            };
            let mut cfg = SimplexConfig::from_query(&q);
            for _ in 0..25 {
                let k = rng.gen_range(0..m);
                let j = VarId(rng.gen_range(0..n + m));
                if !cfg.tableau.is_basic(j) && !cfg.tableau.row(k)[j.0].is_zero() {
                    let leaving = cfg.tableau.basic()[k];
                    cfg.tableau.pivot(leaving, j).unwrap();
                }
                let target = VarId(rng.gen_range(0..n + m));
                let side = if rng.gen_bool(0.5) { Side::Lower } else { Side::Upper };
                if let Some(rec) = tighten_from_row(&cfg.tableau, &mut cfg.bounds, k, target, side, 0.0) {
                    events += 1;
                    // Oracle: x_target + Σ_k f_k·(row_k·V) with rows summed by hand.
                    let width = n + m;
                    let mut row = vec![Rational::zero(); width];
                    for (kk, e) in q.equations.iter().enumerate() {
                        let w = &rec.explanation[kk];
                        for (var, c) in &e.terms {
                            row[var.0] = &row[var.0] + &(w * c);
                        }
                        row[n + kk] = &row[n + kk] + w;
                    }
                    row[target.0] = &row[target.0] + &Rational::one();
                    let mut acc = Rational::zero();
                    for (j, c) in row.iter().enumerate() {
                        if c.is_zero() {
                            continue;
                        }
                        let pick = match (c > &Rational::zero(), side) {
                            (true, Side::Upper) | (false, Side::Lower) => cfg.bounds.ground(VarId(j), Side::Upper),
                            _ => cfg.bounds.ground(VarId(j), Side::Lower),
                        };
                        acc = &acc + &(c * pick.finite().unwrap());
                    }
                    assert_eq!(acc, rec.new_bound);
                }
            }
        }
        assert!(events > 50, "only {events} tightening events");
    }
}
