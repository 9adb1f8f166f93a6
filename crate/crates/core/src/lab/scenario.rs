//! Synthetic two-expert worlds with known conditional risks.
//!
//! Each class is a mixture of `k_true` vMF modes. The class-major mode
//! directions are spread evenly around a great circle, so mode `j` belongs to
//! class `j mod C` and neighbouring modes belong to different classes. Besides
//! the embedding `u`, every sample carries private classifier evidence
//! `v = a·e_y + N(0, I)`. The true posterior given both views is
//!
//! `p*(c | u, v) ∝ Σ_k exp(κ_gen μ_ck·u) · exp(a v_c)`.
//!
//! The classifier sees `v` and, weighted by `embedding_weight`, the embedding
//! log-likelihood. Gaussian logit noise is added everywhere at `noise_level`
//! and additionally at `ambiguous_noise` where the true top-two margin is
//! below `ambiguous_margin`. Retrieval sees only `u`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cluster::{build_bank, PrototypeBank};
use crate::error::{Error, Result};
use crate::gate::{predict_batch, top1_confidence, GateConfig};
use crate::io::config::TuneGrid;
use crate::io::split::stratified_split;
use crate::io::tune::{tune, TuneOutcome};
use crate::lab::vmf::{draw_vmf, VmfParams};
use crate::model::{
    argmax, normalize, EmbeddingRecord, LabeledEmbeddingSet, Posterior, PredictionRecord,
    UnitEmbedding,
};
use crate::retrieval::mixture_score;

/// How conditional risks are obtained from the true posterior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RiskMode {
    /// `r_e = 1 − p*(ŷ_e | x)`.
    #[default]
    Exact,
    /// Fraction of `redraws` labels drawn from `p*(· | x)` that differ from `ŷ_e`.
    MonteCarlo { redraws: usize },
}

/// Parameters of the generative world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub num_classes: usize,
    pub dim: usize,
    pub k_true: usize,
    pub kappa_gen: f64,
    /// Scale `a` of the private classifier evidence.
    pub evidence_strength: f64,
    /// Weight of the embedding log-likelihood inside the classifier logits.
    pub embedding_weight: f64,
    pub noise_level: f64,
    pub ambiguous_noise: f64,
    pub ambiguous_margin: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            num_classes: 3,
            dim: 8,
            k_true: 2,
            kappa_gen: 6.0,
            evidence_strength: 1.0,
            embedding_weight: 0.0,
            noise_level: 0.0,
            ambiguous_noise: 1.0,
            ambiguous_margin: 0.3,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_classes < 2 {
            return fail(format!("num_classes = {} < 2", self.num_classes));
        }
        if self.dim < 2 {
            return fail(format!("dim = {} < 2", self.dim));
        }
        if self.k_true == 0 {
            return fail("k_true must be at least 1".into());
        }
        let nonneg = [
            ("kappa_gen", self.kappa_gen),
            ("evidence_strength", self.evidence_strength),
            ("embedding_weight", self.embedding_weight),
            ("noise_level", self.noise_level),
            ("ambiguous_noise", self.ambiguous_noise),
            ("ambiguous_margin", self.ambiguous_margin),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} = {v} must be a nonnegative number"));
            }
        }
        Ok(())
    }
}

/// One sampled dataset with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub data: LabeledEmbeddingSet,
    pub true_posterior: Vec<Posterior>,
    pub ambiguous: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoExpertWorld {
    cfg: WorldConfig,
    modes: Vec<Vec<UnitEmbedding>>,
}

// rng streams per sampled dataset
const STREAM_EMBEDDING: u64 = 0;
const STREAM_EVIDENCE: u64 = 1;
const STREAM_NOISE: u64 = 2;

impl TwoExpertWorld {
    pub fn new(cfg: WorldConfig) -> Result<Self> {
        cfg.validate()?;
        let (c, k, d) = (cfg.num_classes, cfg.k_true, cfg.dim);
        let total = c * k;
        let mut modes = vec![Vec::with_capacity(k); c];
        for j in 0..total {
            let angle = 2.0 * std::f64::consts::PI * j as f64 / total as f64;
            let mut v = vec![0.0; d];
            v[0] = angle.cos();
            v[1] = angle.sin();
            modes[j % c].push(normalize(&v)?);
        }
        Ok(Self { cfg, modes })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.cfg
    }

    /// Mode directions per class.
    pub fn modes(&self) -> &[Vec<UnitEmbedding>] {
        &self.modes
    }

    /// `log Σ_k exp(κ_gen μ_ck·u)` per class.
    pub fn embedding_log_likelihood(&self, u: &UnitEmbedding) -> Vec<f64> {
        self.modes
            .iter()
            .map(|ms| {
                let s: Vec<f64> = ms.iter().map(|m| u.cosine(m)).collect();
                mixture_score(&s, self.cfg.kappa_gen)
            })
            .collect()
    }

    /// True posterior given the embedding and the private evidence.
    pub fn posterior(&self, u: &UnitEmbedding, v: &[f64]) -> Posterior {
        let ll = self.embedding_log_likelihood(u);
        let a = self.cfg.evidence_strength;
        let logits: Vec<f64> = ll.iter().zip(v).map(|(l, x)| l + a * x).collect();
        crate::model::softmax(&logits, 1.0).expect("finite scores")
    }

    /// Draws `n_per_class` samples of every class. `role` separates datasets
    /// drawn from the same seed (reference, test, ...).
    pub fn sample(&self, n_per_class: usize, seed: u64, role: u64, id_prefix: &str) -> Result<Scenario> {
        if n_per_class == 0 {
            return Err(Error::Config("n_per_class must be at least 1".into()));
        }
        let stream = |s: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(role * 4 + s);
            rng
        };
        let mut emb_rng = stream(STREAM_EMBEDDING);
        let mut ev_rng = stream(STREAM_EVIDENCE);
        let mut noise_rng = stream(STREAM_NOISE);
        let cfg = &self.cfg;
        let c = cfg.num_classes;
        let n = n_per_class * c;
        let mut records = Vec::with_capacity(n);
        let mut true_posterior = Vec::with_capacity(n);
        let mut ambiguous = Vec::with_capacity(n);
        for y in 0..c {
            for _ in 0..n_per_class {
                let k = emb_rng.random_range(0..cfg.k_true);
                let params = VmfParams::new(self.modes[y][k].clone(), cfg.kappa_gen)?;
                let u = draw_vmf(&params, &mut emb_rng);
                let v: Vec<f64> = (0..c)
                    .map(|j| {
                        let g: f64 = StandardNormal.sample(&mut ev_rng);
                        if j == y {
                            cfg.evidence_strength + g
                        } else {
                            g
                        }
                    })
                    .collect();
                let post = self.posterior(&u, &v);
                let amb = top_two_margin(post.probs()) < cfg.ambiguous_margin;
                let sigma = cfg.noise_level + if amb { cfg.ambiguous_noise } else { 0.0 };
                let ll = self.embedding_log_likelihood(&u);
                let logits: Vec<f64> = (0..c)
                    .map(|j| {
                        let e: f64 = StandardNormal.sample(&mut noise_rng);
                        cfg.embedding_weight * ll[j] + cfg.evidence_strength * v[j] + sigma * e
                    })
                    .collect();
                records.push(EmbeddingRecord {
                    id: format!("{id_prefix}{:06}", records.len() + 1),
                    label: y,
                    logits,
                    embedding: u,
                });
                true_posterior.push(post);
                ambiguous.push(amb);
            }
        }
        Ok(Scenario {
            data: LabeledEmbeddingSet::new(records, c, cfg.dim)?,
            true_posterior,
            ambiguous,
        })
    }
}

fn top_two_margin(p: &[f64]) -> f64 {
    let mut s = p.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    s[0] - s.get(1).copied().unwrap_or(0.0)
}

/// Ground truth for a set of predictions: conditional risks and the Bayes gate.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTruth {
    pub data: LabeledEmbeddingSet,
    pub r_cls: Vec<f64>,
    pub r_sim: Vec<f64>,
    pub eps_cls: Vec<f64>,
    pub eps_sim: Vec<f64>,
    pub bayes_gate: Vec<bool>,
    pub ambiguous: Vec<bool>,
}

impl ScenarioTruth {
    /// Risks of the classifier and retrieval experts behind `records`.
    pub fn from_predictions(
        scenario: &Scenario,
        records: &[PredictionRecord],
        risk: RiskMode,
        seed: u64,
    ) -> Result<Self> {
        let n = scenario.data.len();
        if records.len() != n {
            return Err(Error::LengthMismatch {
                left: n,
                right: records.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        let mut truth = ScenarioTruth {
            data: scenario.data.clone(),
            r_cls: Vec::with_capacity(n),
            r_sim: Vec::with_capacity(n),
            eps_cls: Vec::with_capacity(n),
            eps_sim: Vec::with_capacity(n),
            bayes_gate: Vec::with_capacity(n),
            ambiguous: scenario.ambiguous.clone(),
        };
        for (post, rec) in scenario.true_posterior.iter().zip(records) {
            let (r_cls, r_sim) = match risk {
                RiskMode::Exact => (1.0 - post.get(rec.signals.y_cls), 1.0 - post.get(rec.signals.y_sim)),
                RiskMode::MonteCarlo { redraws } => {
                    if redraws == 0 {
                        return Err(Error::Config("redraws must be at least 1".into()));
                    }
                    let (mut miss_cls, mut miss_sim) = (0usize, 0usize);
                    for _ in 0..redraws {
                        let y = draw_class(post.probs(), &mut rng);
                        miss_cls += usize::from(y != rec.signals.y_cls);
                        miss_sim += usize::from(y != rec.signals.y_sim);
                    }
                    (miss_cls as f64 / redraws as f64, miss_sim as f64 / redraws as f64)
                }
            };
            truth.eps_cls.push(((1.0 - r_cls) - top1_confidence(&rec.p_cls)).abs());
            truth.eps_sim.push(((1.0 - r_sim) - top1_confidence(&rec.p_sim)).abs());
            truth.bayes_gate.push(r_sim < r_cls);
            truth.r_cls.push(r_cls);
            truth.r_sim.push(r_sim);
        }
        Ok(truth)
    }

    pub fn len(&self) -> usize {
        self.r_cls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r_cls.is_empty()
    }
}

fn draw_class<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (c, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return c;
        }
    }
    argmax(p)
}

/// Picks retrieval exactly where it has the smaller conditional risk.
pub fn bayes_gate(truth: &ScenarioTruth) -> Vec<bool> {
    truth
        .r_cls
        .iter()
        .zip(&truth.r_sim)
        .map(|(c, s)| s < c)
        .collect()
}

/// Full configuration of a simulated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub world: WorldConfig,
    /// Samples per class in the evaluation set.
    pub n_per_class: usize,
    /// Samples per class used to build (and tune) the bank.
    pub reference_per_class: usize,
    pub bank_k: usize,
    pub bank_kappa: f64,
    pub tau_sim: f64,
    pub gate: GateConfig,
    /// When present, thresholds and τ_sim are tuned on a stratified split of the reference set.
    pub tune: Option<TuneGrid>,
    pub val_fraction: f64,
    pub risk: RiskMode,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let gate = GateConfig {
            alpha_low: 0.3,
            ..GateConfig::default()
        };
        Self {
            world: WorldConfig::default(),
            n_per_class: 1667,
            reference_per_class: 1000,
            bank_k: 2,
            bank_kappa: 20.0,
            tau_sim: 0.1,
            gate,
            tune: Some(TuneGrid {
                alpha_low: vec![0.3],
                ..TuneGrid::default()
            }),
            val_fraction: 0.1,
            risk: RiskMode::Exact,
            seed: 1,
        }
    }
}

/// Everything produced by [`gen_two_expert_scenario`].
#[derive(Debug, Clone, PartialEq)]
pub struct TwoExpertScenario {
    pub world: TwoExpertWorld,
    pub reference: LabeledEmbeddingSet,
    pub bank: PrototypeBank,
    pub gate: GateConfig,
    pub tuning: Option<TuneOutcome>,
    pub test: Scenario,
    pub records: Vec<PredictionRecord>,
    pub truth: ScenarioTruth,
}

/// Samples a reference set and an evaluation set, builds the bank, optionally
/// tunes the gate, predicts the evaluation set and attaches the ground truth.
pub fn gen_two_expert_scenario(cfg: &ScenarioConfig) -> Result<TwoExpertScenario> {
    if cfg.reference_per_class == 0 || cfg.bank_k == 0 {
        return Err(Error::Config("reference_per_class and bank_k must be positive".into()));
    }
    cfg.gate.validate()?;
    let world = TwoExpertWorld::new(cfg.world.clone())?;
    let reference = world.sample(cfg.reference_per_class, cfg.seed, 0, "ref-")?.data;
    let test = world.sample(cfg.n_per_class, cfg.seed, 1, "test-")?;

    let (bank, gate, tuning) = match &cfg.tune {
        Some(grid) => {
            let (train_idx, val_idx) = stratified_split(&reference, cfg.val_fraction, cfg.seed)?;
            let train = reference.subset(&train_idx)?;
            let val = reference.subset(&val_idx)?;
            let bank = build_bank(&train, cfg.bank_k, cfg.bank_kappa, cfg.tau_sim, cfg.seed)?;
            let outcome = tune(&val, &bank, grid, &cfg.gate)?;
            let bank = bank.with_tau_sim(outcome.best_tau_sim)?;
            (bank, outcome.best, Some(outcome))
        }
        None => {
            let bank = build_bank(&reference, cfg.bank_k, cfg.bank_kappa, cfg.tau_sim, cfg.seed)?;
            (bank, cfg.gate, None)
        }
    };
    let records = predict_batch(&test.data, &bank, &gate)?;
    let truth = ScenarioTruth::from_predictions(&test, &records, cfg.risk, cfg.seed)?;
    Ok(TwoExpertScenario {
        world,
        reference,
        bank,
        gate,
        tuning,
        test,
        records,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(world: WorldConfig) -> ScenarioConfig {
        ScenarioConfig {
            world,
            n_per_class: 200,
            reference_per_class: 100,
            tune: None,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn geometry_alternates_classes() {
        let w = TwoExpertWorld::new(WorldConfig::default()).unwrap();
        assert_eq!(w.modes().len(), 3);
        assert!(w.modes().iter().all(|m| m.len() == 2));
        // modes 0 and 1 are neighbours on the circle and belong to classes 0 and 1
        let cos = w.modes()[0][0].dot(&w.modes()[1][0]);
        assert!((cos - (std::f64::consts::PI / 3.0).cos()).abs() < 1e-12);
    }

    #[test]
    fn noiseless_bayes_classifier_has_bayes_risk() {
        let world = WorldConfig {
            embedding_weight: 1.0,
            noise_level: 0.0,
            ambiguous_noise: 0.0,
            ..WorldConfig::default()
        };
        let s = gen_two_expert_scenario(&small(world)).unwrap();
        for (i, post) in s.test.true_posterior.iter().enumerate() {
            let bayes = 1.0 - post.probs().iter().copied().fold(0.0, f64::max);
            assert!((s.truth.r_cls[i] - bayes).abs() < 1e-9);
            // retrieval can never beat the Bayes classifier
            assert!(!s.truth.bayes_gate[i]);
        }
    }

    #[test]
    fn antipodal_equator_is_a_coin_flip() {
        let world = WorldConfig {
            num_classes: 2,
            dim: 3,
            k_true: 1,
            evidence_strength: 0.0,
            embedding_weight: 1.0,
            ambiguous_noise: 0.0,
            ..WorldConfig::default()
        };
        let s = gen_two_expert_scenario(&ScenarioConfig {
            n_per_class: 3000,
            ..small(world)
        })
        .unwrap();
        let modes = s.world.modes();
        assert!((modes[0][0].dot(&modes[1][0]) + 1.0).abs() < 1e-12);
        let mut seen = 0;
        for (i, r) in s.test.data.records().iter().enumerate() {
            if r.embedding.dot(&modes[0][0]).abs() < 0.01 {
                seen += 1;
                assert!((s.truth.r_cls[i] - 0.5).abs() < 0.05);
                assert!((s.truth.r_sim[i] - 0.5).abs() < 0.05);
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn same_seed_same_truth() {
        let cfg = small(WorldConfig::default());
        let a = gen_two_expert_scenario(&cfg).unwrap();
        let b = gen_two_expert_scenario(&cfg).unwrap();
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.records, b.records);
        let c = gen_two_expert_scenario(&ScenarioConfig { seed: 2, ..cfg }).unwrap();
        assert_ne!(a.truth, c.truth);
    }

    #[test]
    fn monte_carlo_risks_track_exact_ones() {
        let cfg = ScenarioConfig {
            risk: RiskMode::MonteCarlo { redraws: 1000 },
            ..small(WorldConfig::default())
        };
        let mc = gen_two_expert_scenario(&cfg).unwrap();
        let exact = gen_two_expert_scenario(&ScenarioConfig {
            risk: RiskMode::Exact,
            ..cfg
        })
        .unwrap();
        for (a, b) in mc.truth.r_cls.iter().zip(&exact.truth.r_cls) {
            // five standard errors at 1000 redraws
            assert!((a - b).abs() < 0.08);
        }
    }

    #[test]
    fn bayes_gate_examples() {
        let mut truth = gen_two_expert_scenario(&small(WorldConfig::default())).unwrap().truth;
        truth.r_cls = vec![0.3, 0.25, 0.1];
        truth.r_sim = vec![0.2, 0.25, 0.4];
        assert_eq!(bayes_gate(&truth), vec![true, false, false]);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(TwoExpertWorld::new(WorldConfig {
            num_classes: 1,
            ..WorldConfig::default()
        })
        .is_err());
        assert!(TwoExpertWorld::new(WorldConfig {
            kappa_gen: -1.0,
            ..WorldConfig::default()
        })
        .is_err());
        let cfg = ScenarioConfig {
            bank_k: 0,
            ..ScenarioConfig::default()
        };
        assert!(matches!(gen_two_expert_scenario(&cfg), Err(Error::Config(_))));
    }
}
