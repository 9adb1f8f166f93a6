#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use protogate::lab::scenario::{TwoExpertWorld, WorldConfig};
use protogate::{normalize, LabeledEmbeddingSet, Posterior, UnitEmbedding};

pub fn random_unit<R: Rng>(rng: &mut R, d: usize) -> UnitEmbedding {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        if let Ok(u) = normalize(&v) {
            return u;
        }
    }
}

pub fn random_posterior<R: Rng>(rng: &mut R, c: usize) -> Posterior {
    let w: Vec<f64> = (0..c).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = w.iter().sum();
    Posterior::new(w.iter().map(|x| x / s).collect()).unwrap()
}

/// Posterior from small integer weights, so that ties across samples are common.
pub fn coarse_posterior<R: Rng>(rng: &mut R, c: usize) -> Posterior {
    let w: Vec<f64> = (0..c).map(|_| rng.random_range(1..=4) as f64).collect();
    let s: f64 = w.iter().sum();
    Posterior::new(w.iter().map(|x| x / s).collect()).unwrap()
}

pub fn world(num_classes: usize, dim: usize) -> TwoExpertWorld {
    TwoExpertWorld::new(WorldConfig {
        num_classes,
        dim,
        ..WorldConfig::default()
    })
    .unwrap()
}

/// A labeled sample of the default synthetic world.
pub fn world_data(num_classes: usize, dim: usize, n_per_class: usize, seed: u64, role: u64) -> LabeledEmbeddingSet {
    world(num_classes, dim)
        .sample(n_per_class, seed, role, &format!("r{role}-"))
        .unwrap()
        .data
}

/// Global minimum of `Σ_k (n_k − ‖S_k‖)` over every assignment of the points to `k` clusters.
pub fn brute_force_kmeans(points: &[UnitEmbedding], k: usize) -> f64 {
    let n = points.len();
    let d = points[0].dim();
    let mut best = f64::INFINITY;
    let total = k.pow(n as u32);
    for code in 0..total {
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        let mut c = code;
        for p in points {
            let a = c % k;
            c /= k;
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p.as_slice()) {
                *s += x;
            }
        }
        let cost: f64 = (0..k)
            .map(|a| counts[a] as f64 - sums[a].iter().map(|x| x * x).sum::<f64>().sqrt())
            .sum();
        best = best.min(cost);
    }
    best
}
