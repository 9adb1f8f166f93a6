//! von Mises-Fisher sampling on the unit sphere (Wood's rejection scheme).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{dot, normalize, UnitEmbedding};

#[derive(Debug, Clone, PartialEq)]
pub struct VmfParams {
    mean_dir: UnitEmbedding,
    kappa: f64,
}

impl VmfParams {
    pub fn new(mean_dir: UnitEmbedding, kappa: f64) -> Result<Self> {
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidParameter(format!("kappa must be nonnegative, got {kappa}")));
        }
        Ok(Self { mean_dir, kappa })
    }

    pub fn mean_dir(&self) -> &UnitEmbedding {
        &self.mean_dir
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }
}

/// `n` independent draws, reproducible from `seed`.
pub fn sample_vmf(params: &VmfParams, n: usize, seed: u64) -> Vec<UnitEmbedding> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| draw_vmf(params, &mut rng)).collect()
}

/// One draw from `rng`.
pub fn draw_vmf<R: Rng + ?Sized>(params: &VmfParams, rng: &mut R) -> UnitEmbedding {
    let mu = params.mean_dir.as_slice();
    let d = mu.len();
    let w = sample_cosine(params.kappa, d, rng);
    // uniform direction orthogonal to mu
    let tangent = loop {
        let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let proj = dot(&g, mu);
        let t: Vec<f64> = g.iter().zip(mu).map(|(gi, mi)| gi - proj * mi).collect();
        if let Ok(t) = normalize(&t) {
            break t;
        }
    };
    let r = (1.0 - w * w).max(0.0).sqrt();
    let v: Vec<f64> = mu
        .iter()
        .zip(tangent.as_slice())
        .map(|(m, t)| w * m + r * t)
        .collect();
    normalize(&v).expect("vMF sample has unit norm up to rounding")
}

// Cosine to the mean direction, by Wood's envelope on the Beta proposal.
fn sample_cosine<R: Rng + ?Sized>(kappa: f64, d: usize, rng: &mut R) -> f64 {
    let dm1 = (d - 1) as f64;
    let b = dm1 / (2.0 * kappa + (4.0 * kappa * kappa + dm1 * dm1).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + dm1 * (1.0 - x0 * x0).ln();
    let beta = Beta::new(dm1 / 2.0, dm1 / 2.0).expect("shape parameters are positive");
    loop {
        let z: f64 = beta.sample(rng);
        let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
        let u: f64 = rng.random();
        if kappa * w + dm1 * (1.0 - x0 * w).ln() - c >= u.ln() {
            return w.clamp(-1.0, 1.0);
        }
    }
}

/// Mean resultant length of a vMF on the 2-sphere: `coth κ − 1/κ`.
pub fn mean_resultant_length_s2(kappa: f64) -> f64 {
    1.0 / kappa.tanh() - 1.0 / kappa
}
