mod common;

use certrelu::simplex::{Contradiction, Engine, EngineOptions, Verdict};
use certrelu::{Equation, ExtendedScalar, Query, Rational, VarId};
use common::{lp_feasible, q, Q};
use num_traits::{Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_lp(rng: &mut ChaCha8Rng) -> Query<Rational> {
    let n: usize = rng.gen_range(2..=8);
    let m = rng.gen_range(n.saturating_sub(3).max(1)..n);
    let equations = (0..m)
        .map(|_| {
            let mut terms = Vec::new();
            for j in 0..n {
                if rng.gen_bool(0.6) {
                    terms.push((VarId(j), Rational::new(rng.gen_range(-4..=4), rng.gen_range(1..=4))));
                }
            }
            Equation::new(terms, Rational::new(rng.gen_range(-6..=6), rng.gen_range(1..=3)))
        })
        .collect();
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for _ in 0..n {
        let l = Rational::new(rng.gen_range(-5..=2), rng.gen_range(1..=2));
        let u = &l + &Rational::new(rng.gen_range(0..=6), rng.gen_range(1..=3));
        lower.push(if rng.gen_bool(0.1) { ExtendedScalar::NegInf } else { ExtendedScalar::Finite(l) });
        upper.push(if rng.gen_bool(0.1) { ExtendedScalar::PosInf } else { ExtendedScalar::Finite(u) });
    }
    Query {
        var_names: (0..n).map(|j| format!("x{j}")).collect(),
        equations,
        lower,
        upper,
        relus: vec![],
        inputs: vec![],
        outputs: vec![],
    }
}

fn satisfies(query: &Query<Rational>, x: &[Rational]) -> bool {
    let eqs = query.equations.iter().all(|e| {
        let lhs = e.terms.iter().fold(Q::zero(), |a, (v, c)| a + q(c) * q(&x[v.0]));
        lhs == q(&e.rhs)
    });
    let bounds = (0..query.n_vars()).all(|j| {
        let v = q(&x[j]);
        let lo_ok = query.lower[j].finite().is_none_or(|l| q(l) <= v);
        let hi_ok = query.upper[j].finite().is_none_or(|u| v <= q(u));
        lo_ok && hi_ok
    });
    eqs && bounds
}

/// Upper bound of `Σ w_k (e_k·x - rhs_k)` over the box; negative means infeasible.
fn certificate_upper(query: &Query<Rational>, w: &[Rational]) -> Option<Q> {
    let n = query.n_vars();
    let mut row = vec![Q::zero(); n];
    let mut constant = Q::zero();
    for (e, wk) in query.equations.iter().zip(w) {
        for (v, c) in &e.terms {
            row[v.0] = &row[v.0] + q(wk) * q(c);
        }
        constant -= q(wk) * q(&e.rhs);
    }
    let mut acc = constant;
    for j in 0..n {
        if row[j].is_zero() {
            continue;
        }
        let b = if row[j].is_positive() { &query.upper[j] } else { &query.lower[j] };
        acc += &row[j] * q(b.finite()?);
    }
    Some(acc)
}

#[test]
fn verdicts_match_fourier_motzkin_on_random_lps() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut sat, mut unsat) = (0, 0);
    for _ in 0..200 {
        let query = random_lp(&mut rng);
        let expected = lp_feasible(&query);
        let mut engine = Engine::new(&query, EngineOptions::default());
        match engine.solve().expect("engine terminates") {
            Verdict::Sat(alpha) => {
                assert!(expected, "engine says sat, oracle says unsat: {query:?}");
                assert!(satisfies(&query, &alpha.values[..query.n_vars()]));
                sat += 1;
            }
            Verdict::Unsat(c) => {
                assert!(!expected, "engine says unsat, oracle says sat: {query:?}");
                match c {
                    Contradiction::Farkas(w) => {
                        let up = certificate_upper(&query, &w).expect("finite certificate");
                        assert!(up.is_negative(), "certificate upper {up}");
                    }
                    Contradiction::VarSymbol(v) => {
                        let (l, u) = (&query.lower[v.0], &query.upper[v.0]);
                        assert!(l.finite().unwrap() > u.finite().unwrap());
                    }
                }
                unsat += 1;
            }
        }
    }
    assert!(sat >= 20 && unsat >= 20, "sat {sat} unsat {unsat}");
}

#[test]
fn float_engine_mostly_agrees_on_random_lps() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut agree = 0;
    for _ in 0..100 {
        let query = random_lp(&mut rng);
        let expected = lp_feasible(&query);
        let fq = query.map(|r| certrelu::Float(r.to_f64()));
        let mut engine = Engine::new(&fq, EngineOptions::default());
        if let Ok(v) = engine.solve() {
            if matches!(v, Verdict::Sat(_)) == expected {
                agree += 1;
            }
        }
    }
    assert!(agree >= 95, "float agreed on {agree}/100");
}
