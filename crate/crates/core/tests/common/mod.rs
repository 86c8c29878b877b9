//! Test-only oracles, written against num-rational directly so they share
//! no arithmetic code with the crate under test.

#![allow(dead_code)]

use std::collections::BTreeMap;

use certrelu::{ExtendedScalar, Query, Rational};
use num_rational::BigRational;
use num_traits::{Signed, Zero};

pub type Q = BigRational;

pub fn q(r: &Rational) -> Q {
    r.as_big().clone()
}

/// Feasibility of `{eqs: a·x = c} ∧ {ineqs: a·x ≤ c}` over `n` reals by
/// Gaussian elimination of the equalities followed by Fourier–Motzkin.
pub fn feasible(n: usize, mut eqs: Vec<(Vec<Q>, Q)>, mut ineqs: Vec<(Vec<Q>, Q)>) -> bool {
    let mut live = vec![true; n];
    while let Some((a, c)) = eqs.pop() {
        let Some(p) = (0..n).find(|&j| !a[j].is_zero()) else {
            if !c.is_zero() {
                return false;
            }
            continue;
        };
        let eliminate = |row: &mut Vec<Q>, rhs: &mut Q| {
            if row[p].is_zero() {
                return;
            }
            let t = &row[p] / &a[p];
            for j in 0..n {
                row[j] = &row[j] - &(&t * &a[j]);
            }
            *rhs = &*rhs - &(&t * &c);
        };
        for (row, rhs) in eqs.iter_mut() {
            eliminate(row, rhs);
        }
        for (row, rhs) in ineqs.iter_mut() {
            eliminate(row, rhs);
        }
        live[p] = false;
    }
    let mut set = normalize(ineqs);
    loop {
        let Some(ref mut s) = set else { return false };
        let occ = |k: usize, pos: bool| {
            s.keys()
                .filter(|a| if pos { a[k].is_positive() } else { a[k].is_negative() })
                .count()
        };
        let pick = (0..n)
            .filter(|&k| live[k] && s.keys().any(|a| !a[k].is_zero()))
            .min_by_key(|&k| occ(k, true) * occ(k, false));
        let Some(k) = pick else {
            return true;
        };
        live[k] = false;
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        let mut rest = Vec::new();
        for (a, c) in std::mem::take(s) {
            if a[k].is_positive() {
                pos.push((a, c));
            } else if a[k].is_negative() {
                neg.push((a, c));
            } else {
                rest.push((a, c));
            }
        }
        for (ap, cp) in &pos {
            for (an, cn) in &neg {
                let sp = -&an[k];
                let sn = ap[k].clone();
                let a: Vec<Q> = ap.iter().zip(an).map(|(x, y)| x * &sp + y * &sn).collect();
                rest.push((a, cp * &sp + cn * &sn));
            }
        }
        set = normalize(rest);
    }
}

/// Scales each inequality so its first nonzero coefficient has magnitude
/// one and keeps the tightest copy. `None` if a constant row is violated.
fn normalize(ineqs: Vec<(Vec<Q>, Q)>) -> Option<BTreeMap<Vec<Q>, Q>> {
    let mut out: BTreeMap<Vec<Q>, Q> = BTreeMap::new();
    for (a, c) in ineqs {
        let Some(lead) = a.iter().find(|x| !x.is_zero()).map(|x| x.abs()) else {
            if c.is_negative() {
                return None;
            }
            continue;
        };
        let a: Vec<Q> = a.iter().map(|x| x / &lead).collect();
        let c = c / &lead;
        match out.get_mut(&a) {
            Some(old) if *old <= c => {}
            Some(old) => *old = c,
            None => {
                out.insert(a, c);
            }
        }
    }
    Some(out)
}

/// Box constraints of a bound pair as `a·x ≤ c` rows.
pub fn box_rows(n: usize, j: usize, lo: &ExtendedScalar<Rational>, hi: &ExtendedScalar<Rational>) -> Vec<(Vec<Q>, Q)> {
    let mut out = Vec::new();
    if let ExtendedScalar::Finite(u) = hi {
        let mut a = vec![Q::zero(); n];
        a[j] = Q::from_integer(1.into());
        out.push((a, q(u)));
    }
    if let ExtendedScalar::Finite(l) = lo {
        let mut a = vec![Q::zero(); n];
        a[j] = Q::from_integer((-1).into());
        out.push((a, -q(l)));
    }
    out
}

/// Feasibility of the pure LP part of `query` (ReLUs ignored).
pub fn lp_feasible(query: &Query<Rational>) -> bool {
    let n = query.n_vars();
    let eqs = query
        .equations
        .iter()
        .map(|e| {
            let mut a = vec![Q::zero(); n];
            for (v, c) in &e.terms {
                a[v.0] = &a[v.0] + q(c);
            }
            (a, q(&e.rhs))
        })
        .collect();
    let mut ineqs = Vec::new();
    for j in 0..n {
        ineqs.extend(box_rows(n, j, &query.lower[j], &query.upper[j]));
    }
    feasible(n, eqs, ineqs)
}

fn unit(n: usize, terms: &[(usize, i64)]) -> Vec<Q> {
    let mut a = vec![Q::zero(); n];
    for &(j, c) in terms {
        a[j] = Q::from_integer(c.into());
    }
    a
}

/// Feasibility of the query with every ReLU enforced, by enumerating phase
/// patterns depth first. A partial pattern whose relaxation (unfixed ReLUs
/// dropped) is infeasible prunes all of its completions.
pub fn relu_feasible(query: &Query<Rational>) -> bool {
    let n = query.n_vars();
    let mut eqs: Vec<(Vec<Q>, Q)> = query
        .equations
        .iter()
        .map(|e| {
            let mut a = vec![Q::zero(); n];
            for (v, c) in &e.terms {
                a[v.0] = &a[v.0] + q(c);
            }
            (a, q(&e.rhs))
        })
        .collect();
    let mut ineqs = Vec::new();
    for j in 0..n {
        ineqs.extend(box_rows(n, j, &query.lower[j], &query.upper[j]));
    }
    fn go(query: &Query<Rational>, k: usize, n: usize, eqs: &mut Vec<(Vec<Q>, Q)>, ineqs: &mut Vec<(Vec<Q>, Q)>) -> bool {
        if !feasible(n, eqs.clone(), ineqs.clone()) {
            return false;
        }
        if k == query.relus.len() {
            return true;
        }
        let (b, f) = (query.relus[k].b.0, query.relus[k].f.0);
        // Active: f = b, b ≥ 0.
        eqs.push((unit(n, &[(f, 1), (b, -1)]), Q::zero()));
        ineqs.push((unit(n, &[(b, -1)]), Q::zero()));
        let active = go(query, k + 1, n, eqs, ineqs);
        eqs.pop();
        ineqs.pop();
        if active {
            return true;
        }
        // Inactive: f = 0, b ≤ 0.
        eqs.push((unit(n, &[(f, 1)]), Q::zero()));
        ineqs.push((unit(n, &[(b, 1)]), Q::zero()));
        let inactive = go(query, k + 1, n, eqs, ineqs);
        eqs.pop();
        ineqs.pop();
        inactive
    }
    go(query, 0, n, &mut eqs, &mut ineqs)
}
