#![allow(dead_code)]

use decmm_core::problems::generate_pl_game;
use decmm_core::{AgentStack, QuadraticGame, RobustRegression};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    (0..k).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn game(seed: u64, agents: usize, n: usize, d: usize) -> QuadraticGame {
    generate_pl_game(agents, n, d, 1.0, &mut rng(seed)).unwrap()
}

/// Gaussian features with labels from a noisy linear teacher.
pub fn regression(seed: u64, agents: usize, n: usize, d: usize) -> RobustRegression {
    let mut r = rng(seed);
    let teacher = gaussian(&mut r, d);
    let shards = (0..agents)
        .map(|_| {
            let a = DMatrix::from_fn(d, n, |_, _| r.sample::<f64, _>(StandardNormal));
            let b = (0..n)
                .map(|j| {
                    let s: f64 = (0..d).map(|k| a[(k, j)] * teacher[k]).sum::<f64>()
                        + 0.5 * r.sample::<f64, _>(StandardNormal);
                    if s >= 0.0 { 1.0 } else { -1.0 }
                })
                .collect();
            (a, b)
        })
        .collect();
    RobustRegression::new(shards, 1.0).unwrap()
}

pub fn random_stack(seed: u64, agents: usize, width: usize) -> AgentStack {
    let mut r = rng(seed);
    AgentStack::from_fn(agents, width, |_, _| r.sample(StandardNormal))
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}
