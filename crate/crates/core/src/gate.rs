//! Gate signals, the strict binary gate, fusion and batch inference.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::PrototypeBank;
use crate::error::{Error, Result};
use crate::model::{
    argmax, argmax_class, softmax, LabeledEmbeddingSet, Posterior, PredictionRecord, Source,
};
use crate::retrieval::retrieve;

/// Gate thresholds and the fusion weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateConfig {
    /// Classifier confidence must be strictly below this.
    pub theta_gate: f64,
    /// Similarity confidence must be strictly above this.
    pub beta: f64,
    pub m_sim: f64,
    /// Jensen-Shannon threshold in nats.
    pub delta: f64,
    pub alpha_low: f64,
    /// When set, the classifier entropy must also exceed this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy_max: Option<f64>,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            theta_gate: 0.7,
            beta: 0.8,
            m_sim: 0.3,
            delta: 0.1,
            alpha_low: 0.9,
            entropy_max: None,
        }
    }
}

impl GateConfig {
    /// Checks every field against its legal range.
    ///
    /// `theta_gate = 0` is accepted as the switch that disables the gate entirely.
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, v: f64| {
            Err(Error::Config(format!("{name} = {v} is out of range")))
        };
        if !(0.0..=1.0).contains(&self.theta_gate) {
            return bad("theta_gate", self.theta_gate);
        }
        if !(0.0..1.0).contains(&self.beta) {
            return bad("beta", self.beta);
        }
        if !(0.0..1.0).contains(&self.m_sim) {
            return bad("m_sim", self.m_sim);
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return bad("delta", self.delta);
        }
        if !(0.0..=1.0).contains(&self.alpha_low) {
            return bad("alpha_low", self.alpha_low);
        }
        if let Some(h) = self.entropy_max {
            if !(h >= 0.0 && h.is_finite()) {
                return bad("entropy_max", h);
            }
        }
        Ok(())
    }
}

/// Every quantity the gate looks at, plus its decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateSignals {
    pub gamma_cls: f64,
    pub h_cls: f64,
    pub gamma_sim: f64,
    pub delta_sim: f64,
    pub d_js: f64,
    pub y_cls: usize,
    pub y_sim: usize,
    pub gate: bool,
}

pub fn top1_confidence(p: &Posterior) -> f64 {
    p.probs().iter().copied().fold(0.0, f64::max)
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &Posterior) -> f64 {
    -p.probs()
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|x| x * x.ln())
        .sum::<f64>()
}

/// Largest minus second-largest probability.
pub fn sim_margin(p: &Posterior) -> Result<f64> {
    let probs = p.probs();
    if probs.len() < 2 {
        return Err(Error::TooFewClasses);
    }
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &x in probs {
        if x > first {
            second = first;
            first = x;
        } else if x > second {
            second = x;
        }
    }
    Ok(first - second)
}

fn same_classes(p: &Posterior, q: &Posterior) -> Result<()> {
    if p.num_classes() != q.num_classes() {
        return Err(Error::DimMismatch {
            expected: p.num_classes(),
            got: q.num_classes(),
        });
    }
    Ok(())
}

/// Jensen-Shannon divergence in nats; bounded by ln 2.
pub fn js_divergence(p: &Posterior, q: &Posterior) -> Result<f64> {
    same_classes(p, q)?;
    let mut js = 0.0;
    for (&a, &b) in p.probs().iter().zip(q.probs()) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            js += 0.5 * a * (a / m).ln();
        }
        if b > 0.0 {
            js += 0.5 * b * (b / m).ln();
        }
    }
    Ok(js.max(0.0))
}

/// Computes all signals and the gate. Every comparison is strict.
pub fn evaluate_gate(p_cls: &Posterior, p_sim: &Posterior, cfg: &GateConfig) -> Result<GateSignals> {
    same_classes(p_cls, p_sim)?;
    let gamma_cls = top1_confidence(p_cls);
    let h_cls = entropy(p_cls);
    let gamma_sim = top1_confidence(p_sim);
    let delta_sim = sim_margin(p_sim)?;
    let d_js = js_divergence(p_cls, p_sim)?;
    let y_cls = argmax_class(p_cls);
    let y_sim = argmax_class(p_sim);
    let gate = gamma_cls < cfg.theta_gate
        && gamma_sim > cfg.beta
        && delta_sim > cfg.m_sim
        && d_js > cfg.delta
        && y_cls != y_sim
        && cfg.entropy_max.is_none_or(|h| h_cls > h);
    Ok(GateSignals {
        gamma_cls,
        h_cls,
        gamma_sim,
        delta_sim,
        d_js,
        y_cls,
        y_sim,
        gate,
    })
}

/// `α·p_cls + (1 − α)·p_sim`.
pub fn fuse(p_cls: &Posterior, p_sim: &Posterior, alpha_low: f64) -> Result<Posterior> {
    same_classes(p_cls, p_sim)?;
    if !(0.0..=1.0).contains(&alpha_low) {
        return Err(Error::InvalidParameter(format!(
            "alpha_low must lie in [0, 1], got {alpha_low}"
        )));
    }
    if alpha_low == 1.0 {
        return Ok(p_cls.clone());
    }
    if alpha_low == 0.0 {
        return Ok(p_sim.clone());
    }
    Ok(Posterior::from_computed(
        p_cls
            .probs()
            .iter()
            .zip(p_sim.probs())
            .map(|(a, b)| alpha_low * a + (1.0 - alpha_low) * b)
            .collect(),
    ))
}

/// The deployed posterior and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalPosterior {
    pub p_final: Posterior,
    pub y_hat: usize,
    pub source: Source,
    pub signals: GateSignals,
}

/// When the gate stays closed the classifier posterior is returned as is, bit for bit.
pub fn final_posterior(p_cls: &Posterior, p_sim: &Posterior, cfg: &GateConfig) -> Result<FinalPosterior> {
    let signals = evaluate_gate(p_cls, p_sim, cfg)?;
    let (p_final, source) = if signals.gate {
        (fuse(p_cls, p_sim, cfg.alpha_low)?, Source::Fused)
    } else {
        (p_cls.clone(), Source::Classifier)
    };
    Ok(FinalPosterior {
        y_hat: argmax(p_final.probs()),
        p_final,
        source,
        signals,
    })
}

/// Runs the full dual-path inference for every record, preserving input order.
pub fn predict_batch(
    data: &LabeledEmbeddingSet,
    bank: &PrototypeBank,
    cfg: &GateConfig,
) -> Result<Vec<PredictionRecord>> {
    cfg.validate()?;
    if data.num_classes() != bank.num_classes() {
        return Err(Error::Schema(format!(
            "data has {} classes but the bank has {}",
            data.num_classes(),
            bank.num_classes()
        )));
    }
    if !data.is_empty() && data.dim() != bank.dim() {
        return Err(Error::DimMismatch {
            expected: bank.dim(),
            got: data.dim(),
        });
    }
    data.records()
        .par_iter()
        .map(|r| {
            let run = || {
                let p_cls = softmax(&r.logits, 1.0)?;
                let p_sim = retrieve(&r.embedding, bank)?;
                assemble(&r.id, p_cls, p_sim, cfg)
            };
            run().map_err(|e| e.for_record(&r.id))
        })
        .collect()
}

/// Gate and fuse already computed posterior pairs; used when `p_sim` is cached.
pub fn predict_posteriors(
    ids: &[String],
    p_cls: &[Posterior],
    p_sim: &[Posterior],
    cfg: &GateConfig,
) -> Result<Vec<PredictionRecord>> {
    cfg.validate()?;
    if ids.len() != p_cls.len() || ids.len() != p_sim.len() {
        return Err(Error::LengthMismatch {
            left: ids.len(),
            right: p_cls.len().min(p_sim.len()),
        });
    }
    ids.par_iter()
        .zip(p_cls.par_iter().zip(p_sim.par_iter()))
        .map(|(id, (c, s))| assemble(id, c.clone(), s.clone(), cfg).map_err(|e| e.for_record(id)))
        .collect()
}

fn assemble(id: &str, p_cls: Posterior, p_sim: Posterior, cfg: &GateConfig) -> Result<PredictionRecord> {
    let f = final_posterior(&p_cls, &p_sim, cfg)?;
    Ok(PredictionRecord {
        id: id.to_string(),
        p_cls,
        p_sim,
        signals: f.signals,
        p_final: f.p_final,
        y_hat: f.y_hat,
        source: f.source,
    })
}
