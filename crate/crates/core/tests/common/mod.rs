#![allow(dead_code)]

use leadfollow::measures::{Configuration, EmpiricalMeasure};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_in(rng: &mut ChaCha8Rng, len: usize, half_width: f64) -> Vec<f64> {
    (0..len).map(|_| half_width * (2.0 * rng.random::<f64>() - 1.0)).collect()
}

pub fn uniform_measure(rng: &mut ChaCha8Rng, dim: usize, n: usize, half_width: f64) -> EmpiricalMeasure {
    EmpiricalMeasure::uniform(dim, uniform_in(rng, n * 2 * dim, half_width)).unwrap()
}

/// Random positive weights normalized to one.
pub fn weighted_measure(rng: &mut ChaCha8Rng, dim: usize, n: usize, half_width: f64) -> EmpiricalMeasure {
    let raw: Vec<f64> = (0..n).map(|_| 0.1 + rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / total).collect();
    EmpiricalMeasure::new(dim, uniform_in(rng, n * 2 * dim, half_width), weights).unwrap()
}

pub fn configuration(rng: &mut ChaCha8Rng, dim: usize, m: usize, n: usize, half_width: f64) -> Configuration {
    Configuration::new(dim, uniform_in(rng, m * 2 * dim, half_width), uniform_in(rng, n * 2 * dim, half_width)).unwrap()
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Every permutation of `0..n`.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

pub fn shuffled(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        p.swap(i, j);
    }
    p
}
