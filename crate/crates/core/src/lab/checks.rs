//! Executable checks of the gate's risk properties.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cluster::PrototypeBank;
use crate::error::{Error, Result};
use crate::gate::{evaluate_gate, fuse, predict_batch, predict_posteriors, GateConfig};
use crate::lab::scenario::{bayes_gate, ScenarioTruth};
use crate::metrics::balanced_accuracy;
use crate::model::{argmax, LabeledEmbeddingSet, Posterior, PredictionRecord, Source};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceReport {
    pub checked: usize,
    pub closed: usize,
    /// Ids of closed-gate records whose final posterior is not the classifier posterior.
    pub violations: Vec<String>,
}

/// Every record with a closed gate must carry `p_final == p_cls` bit for bit.
pub fn check_invariance(records: &[PredictionRecord]) -> InvarianceReport {
    let mut closed = 0;
    let mut violations = Vec::new();
    for r in records {
        let gate_closed = !r.signals.gate || r.source == Source::Classifier;
        if !gate_closed {
            continue;
        }
        closed += 1;
        let same_bits = r.p_final.num_classes() == r.p_cls.num_classes()
            && r
                .p_final
                .probs()
                .iter()
                .zip(r.p_cls.probs())
                .all(|(a, b)| a.to_bits() == b.to_bits());
        let consistent = r.signals.gate == (r.source == Source::Fused);
        if !same_bits || !consistent || r.y_hat != r.signals.y_cls {
            violations.push(r.id.clone());
        }
    }
    InvarianceReport {
        checked: records.len(),
        closed,
        violations,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskDecomposition {
    /// `R(ŷ) − R(ŷ_cls)`.
    pub lhs: f64,
    /// `P(G) · E[err(ŷ) − err(ŷ_cls) | G]`.
    pub rhs: f64,
    pub gate_rate: f64,
}

/// Both sides of the gated risk decomposition on a finite sample.
pub fn risk_decomposition(records: &[PredictionRecord], labels: &[usize]) -> Result<RiskDecomposition> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    if records.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: records.len(),
            right: labels.len(),
        });
    }
    let n = records.len() as f64;
    let err = |y: usize, l: usize| f64::from(u8::from(y != l));
    let (mut total, mut gated_diff, mut gated) = (0.0, 0.0, 0usize);
    for (r, &l) in records.iter().zip(labels) {
        let d = err(r.y_hat, l) - err(r.signals.y_cls, l);
        total += d;
        if r.source == Source::Fused {
            gated += 1;
            gated_diff += d;
        }
    }
    let lhs = total / n;
    let gate_rate = gated as f64 / n;
    let rhs = if gated == 0 {
        0.0
    } else {
        gate_rate * (gated_diff / gated as f64)
    };
    if (lhs - rhs).abs() > 1e-12 {
        return Err(Error::InvariantViolation(format!(
            "risk decomposition broken: {lhs} != {rhs}"
        )));
    }
    Ok(RiskDecomposition { lhs, rhs, gate_rate })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlphaBoundReport {
    pub bound: f64,
    pub trials: usize,
    pub attempts: usize,
    pub counterexamples: usize,
}

/// `m_sim / (m_sim + θ_gate)`.
pub fn alpha_bound(cfg: &GateConfig) -> f64 {
    cfg.m_sim / (cfg.m_sim + cfg.theta_gate)
}

fn random_posterior<R: Rng + ?Sized>(c: usize, sharpness: f64, rng: &mut R) -> Posterior {
    // normalized exponentials: Dirichlet(1) raised to a power
    let w: Vec<f64> = (0..c)
        .map(|_| (-(1.0 - rng.random::<f64>()).ln()).powf(sharpness))
        .collect();
    let s: f64 = w.iter().sum();
    Posterior::new(w.into_iter().map(|x| x / s).collect()).expect("normalized weights")
}

/// Rejection-samples posterior pairs that open the gate and counts those where
/// fusion does not strictly prefer the retrieval class over the classifier class.
pub fn check_alpha_bound(cfg: &GateConfig, trials: usize, seed: u64) -> Result<AlphaBoundReport> {
    cfg.validate()?;
    let bound = alpha_bound(cfg);
    if !(cfg.alpha_low < bound) {
        return Err(Error::PreconditionNotMet(format!(
            "alpha_low = {} is not below m_sim / (m_sim + theta_gate) = {bound}",
            cfg.alpha_low
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_attempts = trials.saturating_mul(100_000).max(1);
    let (mut accepted, mut attempts, mut counterexamples) = (0, 0, 0);
    while accepted < trials {
        if attempts >= max_attempts {
            return Err(Error::PreconditionNotMet(format!(
                "only {accepted} of {trials} gate-passing pairs found in {attempts} draws"
            )));
        }
        attempts += 1;
        let c = rng.random_range(2..=6);
        let p_cls = random_posterior(c, rng.random_range(0.2..1.0), &mut rng);
        let p_sim = random_posterior(c, rng.random_range(1.0..6.0), &mut rng);
        let s = evaluate_gate(&p_cls, &p_sim, cfg)?;
        if !s.gate {
            continue;
        }
        accepted += 1;
        let fused = fuse(&p_cls, &p_sim, cfg.alpha_low)?;
        if !(fused.get(s.y_sim) > fused.get(s.y_cls)) {
            counterexamples += 1;
        }
    }
    Ok(AlphaBoundReport {
        bound,
        trials,
        attempts,
        counterexamples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    /// Samples where `γ_sim − γ_cls > ε_cls + ε_sim`.
    pub premise: usize,
    /// Premise samples where retrieval is not strictly more accurate.
    pub violations: usize,
    /// Premise samples where the practical gate agrees with the Bayes gate.
    pub agree_with_bayes: usize,
}

impl GapReport {
    pub fn agreement_rate(&self) -> Option<f64> {
        (self.premise > 0).then(|| self.agree_with_bayes as f64 / self.premise as f64)
    }
}

/// Checks that a confidence gap beyond both calibration errors implies the
/// retrieval expert is more accurate. `inflation` is added to every ε.
pub fn check_gap_condition(truth: &ScenarioTruth, records: &[PredictionRecord], inflation: f64) -> Result<GapReport> {
    if records.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: truth.len(),
            right: records.len(),
        });
    }
    if !(inflation >= 0.0) {
        return Err(Error::InvalidParameter(format!("inflation must be nonnegative, got {inflation}")));
    }
    let mut report = GapReport {
        premise: 0,
        violations: 0,
        agree_with_bayes: 0,
    };
    for (i, r) in records.iter().enumerate() {
        let gap = r.signals.gamma_sim - r.signals.gamma_cls;
        if gap > truth.eps_cls[i] + truth.eps_sim[i] + 2.0 * inflation {
            report.premise += 1;
            let (a_cls, a_sim) = (1.0 - truth.r_cls[i], 1.0 - truth.r_sim[i]);
            if !(a_sim > a_cls) {
                report.violations += 1;
            }
            if r.signals.gate == truth.bayes_gate[i] {
                report.agree_with_bayes += 1;
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegretReport {
    pub excess_risk: f64,
    pub misrank_prob: f64,
}

/// Excess conditional risk of `gate` over the Bayes gate, bounded by its mis-ranking rate.
pub fn regret_check(truth: &ScenarioTruth, gate: &[bool]) -> Result<RegretReport> {
    if gate.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: truth.len(),
            right: gate.len(),
        });
    }
    if gate.is_empty() {
        return Err(Error::EmptyInput);
    }
    let bayes = bayes_gate(truth);
    let pick = |g: bool, i: usize| if g { truth.r_sim[i] } else { truth.r_cls[i] };
    let (mut excess, mut misranked) = (0.0, 0usize);
    for i in 0..gate.len() {
        let (chosen, best) = (pick(gate[i], i), pick(bayes[i], i));
        excess += chosen - best;
        misranked += usize::from(chosen > best);
    }
    let n = gate.len() as f64;
    let report = RegretReport {
        excess_risk: excess / n,
        misrank_prob: misranked as f64 / n,
    };
    if report.excess_risk > report.misrank_prob + 1e-12 {
        return Err(Error::InvariantViolation(format!(
            "excess risk {} exceeds mis-ranking probability {}",
            report.excess_risk, report.misrank_prob
        )));
    }
    Ok(report)
}

/// Two-sided Hoeffding deviation for a mean of `n` values in `[0, 1]` at confidence `1 − alpha`.
pub fn hoeffding(n: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * n as f64)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskReductionReport {
    pub gate_rate: f64,
    /// Retrieval accuracy minus classifier accuracy on the gated subset.
    pub epsilon: f64,
    pub risk_gated: f64,
    pub risk_classifier: f64,
    /// `risk_classifier − P(G)·ε + 2·sampling_error`.
    pub bound: f64,
    pub sampling_error: f64,
    pub premise_met: bool,
    pub holds: bool,
}

/// Compares the gated risk against the reduction promised by the gated-subset accuracy gap.
pub fn risk_reduction_check(
    records: &[PredictionRecord],
    labels: &[usize],
    min_epsilon: f64,
    min_gate_rate: f64,
) -> Result<RiskReductionReport> {
    let dec = risk_decomposition(records, labels)?;
    let n = records.len();
    let gated: Vec<(&PredictionRecord, usize)> = records
        .iter()
        .zip(labels.iter().copied())
        .filter(|(r, _)| r.source == Source::Fused)
        .collect();
    let epsilon = if gated.is_empty() {
        0.0
    } else {
        let hits = |f: &dyn Fn(&PredictionRecord) -> usize| {
            gated.iter().filter(|(r, l)| f(r) == *l).count() as f64 / gated.len() as f64
        };
        hits(&|r| r.signals.y_sim) - hits(&|r| r.signals.y_cls)
    };
    let risk_classifier =
        records.iter().zip(labels).filter(|(r, l)| r.signals.y_cls != **l).count() as f64 / n as f64;
    let risk_gated = risk_classifier + dec.lhs;
    let sampling_error = hoeffding(n, 0.05);
    let bound = risk_classifier - dec.gate_rate * epsilon + 2.0 * sampling_error;
    Ok(RiskReductionReport {
        gate_rate: dec.gate_rate,
        epsilon,
        risk_gated,
        risk_classifier,
        bound,
        sampling_error,
        premise_met: epsilon >= min_epsilon && dec.gate_rate >= min_gate_rate,
        holds: risk_gated <= bound,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectorRisk {
    pub name: String,
    /// Mean conditional risk of the selected expert.
    pub expected_risk: f64,
    /// 0-1 error of the selected expert against the sampled labels.
    pub empirical_risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominanceReport {
    pub selectors: Vec<SelectorRisk>,
    pub tolerance: f64,
    /// Selectors whose empirical risk beats the Bayes selector by more than the tolerance.
    pub violations: Vec<String>,
}

/// Bayes selector against classifier-only, retrieval-only and the practical gate.
pub fn bayes_dominance(truth: &ScenarioTruth, records: &[PredictionRecord], tolerance: f64) -> Result<DominanceReport> {
    if records.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: truth.len(),
            right: records.len(),
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let labels = truth.data.labels();
    let n = records.len() as f64;
    let practical: Vec<bool> = records.iter().map(|r| r.signals.gate).collect();
    let gates: [(&str, Vec<bool>); 4] = [
        ("bayes", bayes_gate(truth)),
        ("classifier", vec![false; records.len()]),
        ("similarity", vec![true; records.len()]),
        ("practical", practical),
    ];
    let selectors: Vec<SelectorRisk> = gates
        .iter()
        .map(|(name, g)| {
            let (mut expected, mut wrong) = (0.0, 0usize);
            for (i, r) in records.iter().enumerate() {
                let (risk, y) = if g[i] {
                    (truth.r_sim[i], r.signals.y_sim)
                } else {
                    (truth.r_cls[i], r.signals.y_cls)
                };
                expected += risk;
                wrong += usize::from(y != labels[i]);
            }
            SelectorRisk {
                name: name.to_string(),
                expected_risk: expected / n,
                empirical_risk: wrong as f64 / n,
            }
        })
        .collect();
    let bayes = selectors[0].empirical_risk;
    let violations = selectors[1..]
        .iter()
        .filter(|s| s.empirical_risk < bayes - tolerance)
        .map(|s| s.name.clone())
        .collect();
    Ok(DominanceReport {
        selectors,
        tolerance,
        violations,
    })
}

/// A gate field varied by [`threshold_sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    ThetaGate,
    Beta,
    MSim,
    Delta,
    AlphaLow,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::ThetaGate => "theta_gate",
            SweepParam::Beta => "beta",
            SweepParam::MSim => "m_sim",
            SweepParam::Delta => "delta",
            SweepParam::AlphaLow => "alpha_low",
        }
    }

    fn set(self, cfg: &mut GateConfig, v: f64) {
        match self {
            SweepParam::ThetaGate => cfg.theta_gate = v,
            SweepParam::Beta => cfg.beta = v,
            SweepParam::MSim => cfg.m_sim = v,
            SweepParam::Delta => cfg.delta = v,
            SweepParam::AlphaLow => cfg.alpha_low = v,
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theta_gate" => Ok(SweepParam::ThetaGate),
            "beta" => Ok(SweepParam::Beta),
            "m_sim" => Ok(SweepParam::MSim),
            "delta" => Ok(SweepParam::Delta),
            "alpha_low" => Ok(SweepParam::AlphaLow),
            other => Err(Error::Config(format!("unknown sweep parameter {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub settings: Vec<(SweepParam, f64)>,
    pub gate_rate: f64,
    /// Accuracy on the gated subset; `None` when nothing is gated.
    pub gated_accuracy: Option<f64>,
    pub overall_accuracy: f64,
    pub balanced_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub params: Vec<SweepParam>,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Overall accuracy per row, in grid order.
    pub fn accuracy_curve(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.overall_accuracy).collect()
    }
}

/// Evaluates `base_cfg` with every combination of the grid values (cartesian,
/// first axis slowest).
pub fn threshold_sweep(
    data: &LabeledEmbeddingSet,
    bank: &PrototypeBank,
    base_cfg: &GateConfig,
    grid: &[(SweepParam, Vec<f64>)],
    labels: &[usize],
) -> Result<SweepResult> {
    if labels.len() != data.len() {
        return Err(Error::LengthMismatch {
            left: data.len(),
            right: labels.len(),
        });
    }
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    if grid.is_empty() || grid.iter().any(|(_, v)| v.is_empty()) {
        return Err(Error::Config("sweep grid has an empty axis".into()));
    }
    let closed = GateConfig {
        theta_gate: 0.0,
        ..*base_cfg
    };
    let base = predict_batch(data, bank, &closed)?;
    let ids: Vec<String> = base.iter().map(|r| r.id.clone()).collect();
    let p_cls: Vec<Posterior> = base.iter().map(|r| r.p_cls.clone()).collect();
    let p_sim: Vec<Posterior> = base.iter().map(|r| r.p_sim.clone()).collect();

    let mut points: Vec<Vec<(SweepParam, f64)>> = vec![vec![]];
    for (param, values) in grid {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push((*param, v));
                    q
                })
            })
            .collect();
    }
    let c = data.num_classes();
    let rows = points
        .into_par_iter()
        .map(|settings| {
            let mut cfg = *base_cfg;
            for &(p, v) in &settings {
                p.set(&mut cfg, v);
            }
            let eval = || -> Result<SweepRow> {
                let recs = predict_posteriors(&ids, &p_cls, &p_sim, &cfg)?;
                sweep_row(settings.clone(), &recs, labels, c)
            };
            eval().map_err(|e| Error::GridPoint {
                point: format!("{settings:?}"),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        params: grid.iter().map(|(p, _)| *p).collect(),
        rows,
    })
}

fn sweep_row(settings: Vec<(SweepParam, f64)>, recs: &[PredictionRecord], labels: &[usize], c: usize) -> Result<SweepRow> {
    let n = recs.len() as f64;
    let gated: Vec<usize> = (0..recs.len()).filter(|&i| recs[i].source == Source::Fused).collect();
    let gated_accuracy = (!gated.is_empty()).then(|| {
        gated.iter().filter(|&&i| recs[i].y_hat == labels[i]).count() as f64 / gated.len() as f64
    });
    let y: Vec<usize> = recs.iter().map(|r| r.y_hat).collect();
    Ok(SweepRow {
        settings,
        gate_rate: gated.len() as f64 / n,
        gated_accuracy,
        overall_accuracy: y.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / n,
        balanced_accuracy: balanced_accuracy(&y, labels, c)?,
    })
}

/// Whether the largest value is attained strictly inside the curve and beats both ends.
pub fn has_interior_peak(curve: &[f64]) -> bool {
    if curve.len() < 3 {
        return false;
    }
    let peak = argmax(curve);
    peak > 0 && peak < curve.len() - 1 && curve[peak] > curve[0] && curve[peak] > curve[curve.len() - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gate::final_posterior;

    fn record(id: &str, p_cls: &[f64], p_sim: &[f64], cfg: &GateConfig) -> PredictionRecord {
        let pc = Posterior::new(p_cls.to_vec()).unwrap();
        let ps = Posterior::new(p_sim.to_vec()).unwrap();
        let f = final_posterior(&pc, &ps, cfg).unwrap();
        PredictionRecord {
            id: id.into(),
            p_cls: pc,
            p_sim: ps,
            signals: f.signals,
            p_final: f.p_final,
            y_hat: f.y_hat,
            source: f.source,
        }
    }

    fn gated_cfg() -> GateConfig {
        GateConfig {
            alpha_low: 0.2,
            ..GateConfig::default()
        }
    }

    #[test]
    fn invariance_detects_corruption() {
        let cfg = gated_cfg();
        let mut recs = vec![
            record("a", &[0.9, 0.1], &[0.1, 0.9], &cfg),
            record("b", &[0.6, 0.4], &[0.05, 0.95], &cfg),
        ];
        let ok = check_invariance(&recs);
        assert_eq!((ok.closed, ok.violations.len()), (1, 0));
        // one ulp off is enough
        recs[0].p_final = Posterior::new(vec![f64::from_bits(0.9f64.to_bits() - 1), 0.1]).unwrap();
        assert_eq!(check_invariance(&recs).violations, vec!["a".to_string()]);
    }

    #[test]
    fn decomposition_examples() {
        let cfg = gated_cfg();
        // gate opens on the second pair and the fused decision follows retrieval
        let fixed = record("g", &[0.6, 0.4], &[0.05, 0.95], &cfg);
        assert_eq!(fixed.source, Source::Fused);
        assert_eq!(fixed.y_hat, 1);
        let keep = record("k", &[0.9, 0.1], &[0.9, 0.1], &cfg);

        let none = risk_decomposition(&[keep.clone(), keep.clone()], &[0, 1]).unwrap();
        assert_eq!((none.lhs, none.rhs), (0.0, 0.0));

        let d = risk_decomposition(&[keep.clone(), keep.clone(), fixed.clone()], &[0, 0, 1]).unwrap();
        assert!((d.lhs + 1.0 / 3.0).abs() < 1e-15 && (d.lhs - d.rhs).abs() < 1e-15);

        let d = risk_decomposition(&[keep.clone(), keep, fixed.clone(), fixed], &[0, 0, 1, 0]).unwrap();
        assert_eq!((d.lhs, d.rhs), (0.0, 0.0));
        assert_eq!(d.gate_rate, 0.5);
    }

    #[test]
    fn alpha_bound_examples() {
        let cfg = GateConfig {
            theta_gate: 0.5,
            m_sim: 0.6,
            alpha_low: 0.4,
            ..GateConfig::default()
        };
        assert!((alpha_bound(&cfg) - 0.6 / 1.1).abs() < 1e-15);
        let r = check_alpha_bound(&cfg, 500, 1).unwrap();
        assert_eq!(r.counterexamples, 0);
        let zero = GateConfig { alpha_low: 0.0, ..cfg };
        assert_eq!(check_alpha_bound(&zero, 200, 2).unwrap().counterexamples, 0);
        let high = GateConfig { alpha_low: 0.9, ..cfg };
        assert!(matches!(check_alpha_bound(&high, 10, 0), Err(Error::PreconditionNotMet(_))));
    }

    #[test]
    fn interior_peak_detection() {
        assert!(has_interior_peak(&[0.1, 0.3, 0.2]));
        assert!(!has_interior_peak(&[0.3, 0.3, 0.2]));
        assert!(!has_interior_peak(&[0.1, 0.2, 0.3]));
        assert!(!has_interior_peak(&[0.2, 0.2, 0.2]));
    }

    #[test]
    fn sweep_param_names_round_trip() {
        for p in [
            SweepParam::ThetaGate,
            SweepParam::Beta,
            SweepParam::MSim,
            SweepParam::Delta,
            SweepParam::AlphaLow,
        ] {
            assert_eq!(p.name().parse::<SweepParam>().unwrap(), p);
        }
    }
}
