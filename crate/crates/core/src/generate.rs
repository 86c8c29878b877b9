//! Seeded random networks and properties with small rational weights.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::frontend::{evaluate, Network, Property};
use crate::scalar::{ExtendedScalar, Rational};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenConfig {
    pub inputs: usize,
    pub hidden_layers: usize,
    pub width: usize,
    pub outputs: usize,
    /// Denominators are drawn from `1..=max_denominator`.
    pub max_denominator: i64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            inputs: 2,
            hidden_layers: 2,
            width: 2,
            outputs: 1,
            max_denominator: 8,
        }
    }
}

fn small(rng: &mut ChaCha8Rng, max_num: i64, max_den: i64) -> Rational {
    Rational::new(rng.gen_range(-max_num..=max_num), rng.gen_range(1..=max_den.max(1)))
}

pub fn random_network(rng: &mut ChaCha8Rng, cfg: &GenConfig) -> Network {
    let mut layers = vec![cfg.inputs];
    layers.extend(std::iter::repeat_n(cfg.width, cfg.hidden_layers));
    layers.push(cfg.outputs);
    let d = cfg.max_denominator;
    let weights = layers
        .windows(2)
        .map(|w| (0..w[1]).map(|_| (0..w[0]).map(|_| small(rng, 2 * d, d)).collect()).collect())
        .collect();
    let biases = layers[1..].iter().map(|&s| (0..s).map(|_| small(rng, d, d)).collect()).collect();
    Network::new(layers, weights, biases).expect("generated shapes are consistent")
}

/// A random input box, and an output box placed near the image of a
/// random input so that both verdicts occur.
pub fn random_property(rng: &mut ChaCha8Rng, net: &Network, max_den: i64) -> Property {
    let mut input = Vec::new();
    let mut centre = Vec::new();
    for _ in 0..net.n_inputs() {
        let lo = small(rng, 2 * max_den, max_den);
        let width = Rational::new(rng.gen_range(0..=2 * max_den), rng.gen_range(1..=max_den));
        let hi = &lo + &width;
        let t = Rational::new(rng.gen_range(0..=4), 4);
        centre.push(&lo + &(&t * &width));
        input.push((ExtendedScalar::Finite(lo), ExtendedScalar::Finite(hi)));
    }
    let y = evaluate(net, &centre).expect("centre has the input width");
    let output = y
        .iter()
        .map(|v| {
            let shift = small(rng, max_den, max_den);
            let width = Rational::new(rng.gen_range(0..=max_den), rng.gen_range(1..=max_den));
            let lo = v + &shift;
            let hi = &lo + &width;
            let choice = [0, 1, 2, 2, 2];
            match choice.choose(rng) {
                Some(0) => (ExtendedScalar::NegInf, ExtendedScalar::Finite(hi)),
                Some(1) => (ExtendedScalar::Finite(lo), ExtendedScalar::PosInf),
                _ => (ExtendedScalar::Finite(lo), ExtendedScalar::Finite(hi)),
            }
        })
        .collect();
    Property {
        input,
        output,
        neurons: Vec::new(),
    }
}

/// Deterministic instance for a seed.
pub fn instance(seed: u64, cfg: &GenConfig) -> (Network, Property) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = random_network(&mut rng, cfg);
    let prop = random_property(&mut rng, &net, cfg.max_denominator);
    (net, prop)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{parse_network, parse_property};

    #[test]
    fn same_seed_same_instance() {
        let cfg = GenConfig {
            hidden_layers: 3,
            width: 3,
            ..Default::default()
        };
        let (a, p) = instance(7, &cfg);
        let (b, q) = instance(7, &cfg);
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(p.to_json(), q.to_json());
        assert_ne!(instance(8, &cfg).0, a);
        assert_eq!(a.layers, vec![2, 3, 3, 3, 1]);
    }

    #[test]
    fn generated_files_parse_back() {
        for seed in 0..50 {
            let (net, prop) = instance(seed, &GenConfig::default());
            assert_eq!(parse_network(&net.to_json()).unwrap(), net);
            assert_eq!(parse_property(&prop.to_json()).unwrap(), prop);
            let dens = net.weights.iter().flatten().flatten().chain(net.biases.iter().flatten());
            assert!(dens.into_iter().all(|w| *w.denom() <= 8.into()));
        }
    }
}
