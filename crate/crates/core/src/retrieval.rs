//! EMA teacher smoothing and the vMF-mixture similarity posterior.

use crate::cluster::PrototypeBank;
use crate::error::{Error, Result};
use crate::model::{softmax, Posterior, UnitEmbedding};

/// Teacher parameters tracked as an exponential moving average of a student.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaState {
    teacher: Vec<f64>,
    momentum: f64,
}

impl EmaState {
    pub fn new(teacher: Vec<f64>, momentum: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::InvalidParameter(format!(
                "momentum must lie in [0, 1], got {momentum}"
            )));
        }
        if teacher.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidParameter("non-finite teacher parameter".into()));
        }
        Ok(Self { teacher, momentum })
    }

    pub fn teacher(&self) -> &[f64] {
        &self.teacher
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }
}

/// `teacher' = μ·teacher + (1 − μ)·student`, elementwise.
pub fn ema_update(state: &EmaState, student: &[f64]) -> Result<EmaState> {
    if student.len() != state.teacher.len() {
        return Err(Error::DimMismatch {
            expected: state.teacher.len(),
            got: student.len(),
        });
    }
    let mu = state.momentum;
    let teacher = state
        .teacher
        .iter()
        .zip(student)
        .map(|(t, s)| mu * t + (1.0 - mu) * s)
        .collect();
    EmaState::new(teacher, mu)
}

/// Cosine similarities to every prototype and the per-class mixture scores.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityScores {
    pub per_prototype: Vec<Vec<f64>>,
    pub per_class: Vec<f64>,
}

/// `q_c = log Σ_k exp(κ s_ck)`, evaluated around the largest similarity of the class.
pub fn vmf_class_scores(z: &UnitEmbedding, bank: &PrototypeBank) -> Result<SimilarityScores> {
    if z.dim() != bank.dim() {
        return Err(Error::DimMismatch {
            expected: bank.dim(),
            got: z.dim(),
        });
    }
    let kappa = bank.kappa();
    let per_prototype: Vec<Vec<f64>> = bank
        .prototypes()
        .iter()
        .map(|class| class.iter().map(|p| z.cosine(p)).collect())
        .collect();
    let per_class = per_prototype
        .iter()
        .map(|s| mixture_score(s, kappa))
        .collect();
    Ok(SimilarityScores {
        per_prototype,
        per_class,
    })
}

pub(crate) fn mixture_score(sims: &[f64], kappa: f64) -> f64 {
    let top = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tail: f64 = sims.iter().map(|s| (kappa * (s - top)).exp()).sum();
    kappa * top + tail.ln()
}

/// Softmax of the class scores at temperature `tau_sim`.
pub fn similarity_posterior(scores: &SimilarityScores, tau_sim: f64) -> Result<Posterior> {
    softmax(&scores.per_class, tau_sim)
}

/// Similarity posterior of `z` under the bank's own κ and τ_sim.
pub fn retrieve(z: &UnitEmbedding, bank: &PrototypeBank) -> Result<Posterior> {
    similarity_posterior(&vmf_class_scores(z, bank)?, bank.tau_sim())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::normalize;

    fn u(v: &[f64]) -> UnitEmbedding {
        normalize(v).unwrap()
    }

    #[test]
    fn ema_examples() {
        let s = EmaState::new(vec![0.3, -2.0], 1.0).unwrap();
        assert_eq!(ema_update(&s, &[5.0, 5.0]).unwrap().teacher(), &[0.3, -2.0]);
        let s = EmaState::new(vec![0.3, -2.0], 0.0).unwrap();
        assert_eq!(ema_update(&s, &[5.0, 6.0]).unwrap().teacher(), &[5.0, 6.0]);
        let s = EmaState::new(vec![0.0], 0.999).unwrap();
        assert!((ema_update(&s, &[1.0]).unwrap().teacher()[0] - 0.001).abs() < 1e-15);
        assert!(ema_update(&s, &[1.0, 2.0]).is_err());
        assert!(EmaState::new(vec![0.0], 1.5).is_err());
    }

    #[test]
    fn ema_converges_geometrically() {
        let mu = 0.75;
        let mut s = EmaState::new(vec![1.0], mu).unwrap();
        for n in 1..=20 {
            s = ema_update(&s, &[0.0]).unwrap();
            // powers of 3/4 times 1 are exact in binary
            assert_eq!(s.teacher()[0], mu.powi(n));
        }
    }

    #[test]
    fn mixture_score_examples() {
        assert_eq!(mixture_score(&[1.0], 10.0), 10.0);
        let q = mixture_score(&[0.8, 0.6], 10.0);
        let oracle = 8.0 + (1.0 + (-2.0f64).exp()).ln();
        assert!((q - oracle).abs() < 1e-12);
        assert!((q - 8.1269).abs() < 5e-5);
        let q = mixture_score(&[0.9, 0.1], 1000.0);
        assert!(q.is_finite() && (q - 900.0).abs() < 1e-9);
    }

    #[test]
    fn similarity_posterior_examples() {
        let sc = |q: Vec<f64>| SimilarityScores {
            per_prototype: vec![],
            per_class: q,
        };
        assert_eq!(similarity_posterior(&sc(vec![10.0, 10.0]), 0.37).unwrap().probs(), &[0.5, 0.5]);
        let p = similarity_posterior(&sc(vec![2.0, 0.0]), 1.0).unwrap();
        assert!((p.get(0) - 0.8808).abs() < 5e-5);
        let p = similarity_posterior(&sc(vec![2.0, 0.0]), 0.01).unwrap();
        assert!(p.get(0) > 1.0 - 1e-12);
    }

    fn axis_bank() -> PrototypeBank {
        PrototypeBank::new(
            vec![vec![u(&[1.0, 0.0, 0.0])], vec![u(&[0.0, 1.0, 0.0])], vec![u(&[0.0, 0.0, 1.0])]],
            20.0,
            0.1,
            0,
        )
        .unwrap()
    }

    #[test]
    fn retrieve_examples() {
        let bank = axis_bank();
        let p = retrieve(&u(&[1.0, 0.0, 0.0]), &bank).unwrap();
        assert!(p.get(0) > p.get(1) && p.get(0) > p.get(2));
        let p = retrieve(&u(&[1.0, 1.0, 1.0]), &bank).unwrap();
        for c in 0..3 {
            assert!((p.get(c) - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!(retrieve(&u(&[1.0, 0.0]), &bank).is_err());
    }

    #[test]
    fn retrieve_matches_scalar_recomputation() {
        let protos = [[0.6, 0.8], [-0.28, 0.96], [0.8, -0.6], [-1.0, 0.0]];
        let bank = PrototypeBank::new(
            vec![
                vec![u(&protos[0]), u(&protos[1])],
                vec![u(&protos[2]), u(&protos[3])],
            ],
            7.5,
            0.4,
            0,
        )
        .unwrap();
        let z = [0.28, -0.96];
        let s: Vec<f64> = protos.iter().map(|p| p[0] * z[0] + p[1] * z[1]).collect();
        let q0 = ((7.5 * s[0]).exp() + (7.5 * s[1]).exp()).ln();
        let q1 = ((7.5 * s[2]).exp() + (7.5 * s[3]).exp()).ln();
        let p0 = 1.0 / (1.0 + ((q1 - q0) / 0.4).exp());
        let p = retrieve(&u(&z), &bank).unwrap();
        assert!((p.get(0) - p0).abs() < 1e-12);
        assert!((p.get(1) - (1.0 - p0)).abs() < 1e-12);
    }
}
