//! Exhaustive validation-grid search over the inference parameters.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::Serialize;

use crate::cluster::PrototypeBank;
use crate::error::{Error, Result};
use crate::gate::{predict_posteriors, GateConfig};
use crate::io::config::{Objective, TuneGrid};
use crate::metrics::{accuracy, per_class_stats};
use crate::model::{softmax, LabeledEmbeddingSet, Posterior, PredictionRecord, Source};
use crate::retrieval::{similarity_posterior, vmf_class_scores};

/// One evaluated grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneRow {
    pub theta_gate: f64,
    pub beta: f64,
    pub m_sim: f64,
    pub tau_sim: f64,
    pub delta: f64,
    pub alpha_low: f64,
    pub gate_rate: f64,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub macro_f1: f64,
    pub objective: f64,
}

impl TuneRow {
    pub fn gate_config(&self, entropy_max: Option<f64>) -> GateConfig {
        GateConfig {
            theta_gate: self.theta_gate,
            beta: self.beta,
            m_sim: self.m_sim,
            delta: self.delta,
            alpha_low: self.alpha_low,
            entropy_max,
        }
    }

    fn key(&self) -> [f64; 6] {
        [
            self.theta_gate,
            self.beta,
            self.m_sim,
            self.tau_sim,
            self.delta,
            self.alpha_low,
        ]
    }

    fn label(&self) -> String {
        format!(
            "theta_gate={} beta={} m_sim={} tau_sim={} delta={} alpha_low={}",
            self.theta_gate, self.beta, self.m_sim, self.tau_sim, self.delta, self.alpha_low
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutcome {
    pub best: GateConfig,
    pub best_tau_sim: f64,
    pub best_index: usize,
    /// Rows ordered by τ_sim, then the gate fields in grid order.
    pub rows: Vec<TuneRow>,
}

impl TuneOutcome {
    pub fn best_row(&self) -> &TuneRow {
        &self.rows[self.best_index]
    }
}

/// Gate rate and metrics of a set of predictions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub gate_rate: f64,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub macro_f1: f64,
}

impl Scores {
    pub fn of(records: &[PredictionRecord], labels: &[usize], c: usize) -> Result<Self> {
        let y: Vec<usize> = records.iter().map(|r| r.y_hat).collect();
        let stats = per_class_stats(&y, labels, c)?;
        if let Some(k) = stats.iter().position(|s| s.support == 0) {
            return Err(Error::MissingClass(k));
        }
        let gated = records.iter().filter(|r| r.source == Source::Fused).count();
        Ok(Self {
            gate_rate: gated as f64 / records.len() as f64,
            accuracy: accuracy(&y, labels)?,
            balanced_accuracy: stats.iter().map(|s| s.recall).sum::<f64>() / c as f64,
            macro_f1: stats.iter().map(|s| s.f1).sum::<f64>() / c as f64,
        })
    }

    pub fn objective(&self, objective: Objective) -> f64 {
        match objective {
            Objective::BalancedAccuracy => self.balanced_accuracy,
            Objective::Accuracy => self.accuracy,
            Objective::MacroF1 => self.macro_f1,
        }
    }
}

/// Evaluates every grid point on `val` and picks the best by the grid's objective.
///
/// Ties go to the lower gate rate, then to the lexicographically smaller
/// `(theta_gate, beta, m_sim, tau_sim, delta, alpha_low)`. `base.entropy_max` is
/// carried into every candidate.
pub fn tune(
    val: &LabeledEmbeddingSet,
    bank: &PrototypeBank,
    grid: &TuneGrid,
    base: &GateConfig,
) -> Result<TuneOutcome> {
    grid.validate()?;
    if val.is_empty() {
        return Err(Error::EmptyInput);
    }
    if val.num_classes() != bank.num_classes() {
        return Err(Error::Schema(format!(
            "validation data has {} classes but the bank has {}",
            val.num_classes(),
            bank.num_classes()
        )));
    }
    let labels = val.labels();
    let c = val.num_classes();
    if let Some(k) = (0..c).find(|k| !labels.contains(k)) {
        return Err(Error::MissingClass(k));
    }
    let ids: Vec<String> = val.records().iter().map(|r| r.id.clone()).collect();
    let p_cls = val
        .records()
        .par_iter()
        .map(|r| softmax(&r.logits, 1.0).map_err(|e| e.for_record(&r.id)))
        .collect::<Result<Vec<_>>>()?;
    let scores = val
        .records()
        .par_iter()
        .map(|r| vmf_class_scores(&r.embedding, bank).map_err(|e| e.for_record(&r.id)))
        .collect::<Result<Vec<_>>>()?;
    let configs = grid.gate_configs(base);

    let mut rows = Vec::with_capacity(grid.len());
    for &tau in &grid.tau_sim {
        let p_sim = scores
            .iter()
            .map(|s| similarity_posterior(s, tau))
            .collect::<Result<Vec<Posterior>>>()?;
        let block = configs
            .par_iter()
            .map(|cfg| {
                let eval = || {
                    let recs = predict_posteriors(&ids, &p_cls, &p_sim, cfg)?;
                    Scores::of(&recs, &labels, c)
                };
                let s = eval().map_err(|e| Error::GridPoint {
                    point: format!("{cfg:?} tau_sim={tau}"),
                    source: Box::new(e),
                })?;
                Ok(TuneRow {
                    theta_gate: cfg.theta_gate,
                    beta: cfg.beta,
                    m_sim: cfg.m_sim,
                    tau_sim: tau,
                    delta: cfg.delta,
                    alpha_low: cfg.alpha_low,
                    gate_rate: s.gate_rate,
                    accuracy: s.accuracy,
                    balanced_accuracy: s.balanced_accuracy,
                    macro_f1: s.macro_f1,
                    objective: s.objective(grid.objective),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.extend(block);
    }

    let best_index = (0..rows.len())
        .min_by(|&a, &b| rank(&rows[a], &rows[b]))
        .expect("grid is not empty");
    let best = rows[best_index].gate_config(base.entropy_max);
    best.validate().map_err(|e| Error::GridPoint {
        point: rows[best_index].label(),
        source: Box::new(e),
    })?;
    Ok(TuneOutcome {
        best,
        best_tau_sim: rows[best_index].tau_sim,
        best_index,
        rows,
    })
}

// Less is better.
fn rank(a: &TuneRow, b: &TuneRow) -> Ordering {
    b.objective
        .total_cmp(&a.objective)
        .then(a.gate_rate.total_cmp(&b.gate_rate))
        .then_with(|| {
            a.key()
                .iter()
                .zip(b.key())
                .map(|(x, y)| x.total_cmp(&y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(objective: f64, gate_rate: f64, theta: f64) -> TuneRow {
        TuneRow {
            theta_gate: theta,
            beta: 0.8,
            m_sim: 0.3,
            tau_sim: 0.1,
            delta: 0.1,
            alpha_low: 0.9,
            gate_rate,
            accuracy: objective,
            balanced_accuracy: objective,
            macro_f1: objective,
            objective,
        }
    }

    #[test]
    fn ranking_rules() {
        assert_eq!(rank(&row(0.8, 0.5, 0.9), &row(0.7, 0.0, 0.5)), Ordering::Less);
        assert_eq!(rank(&row(0.8, 0.1, 0.9), &row(0.8, 0.2, 0.5)), Ordering::Less);
        assert_eq!(rank(&row(0.8, 0.1, 0.5), &row(0.8, 0.1, 0.9)), Ordering::Less);
    }
}
