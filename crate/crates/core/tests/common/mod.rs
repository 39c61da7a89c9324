#![allow(dead_code)]

use ploop::dataset::{PairedDataset, PotentialUnit, SyntheticExperiment};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Linear potential outcomes with heterogeneous effects and pair-level
/// shifts: `c = 1 + beta.z + shift_i + noise`, `t = c + 2 + gamma.z`.
pub fn linear_experiment(n: usize, q: usize, noise: f64, seed: u64) -> SyntheticExperiment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta: Vec<f64> = (0..q).map(|_| rng.random_range(-3.0..3.0)).collect();
    let gamma: Vec<f64> = (0..q).map(|_| rng.random_range(-1.0..1.0)).collect();
    let pairs = (0..n)
        .map(|_| {
            let shift = rng.random_range(-2.0..2.0);
            let center: Vec<f64> = (0..q).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut unit = || {
                let z: Vec<f64> = center.iter().map(|c| c + rng.random_range(-0.5..0.5)).collect();
                let dot = |w: &[f64]| w.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
                let c = 1.0 + dot(&beta) + shift + noise * rng.random_range(-1.0..1.0);
                PotentialUnit {
                    t: c + 2.0 + dot(&gamma),
                    c,
                    z,
                }
            };
            let first = unit();
            [first, unit()]
        })
        .collect();
    SyntheticExperiment::new(pairs).unwrap()
}

/// Assignment with both arms represented.
pub fn mixed_assignment(n: usize, rng: &mut impl Rng) -> Vec<bool> {
    loop {
        let t: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        if t.iter().any(|&x| x) && t.iter().any(|&x| !x) {
            return t;
        }
    }
}

pub fn random_dataset(n: usize, q: usize, seed: u64) -> PairedDataset {
    let se = linear_experiment(n, q, 1.0, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    se.realize(&mixed_assignment(n, &mut rng)).unwrap()
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}
