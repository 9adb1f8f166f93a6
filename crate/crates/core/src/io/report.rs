//! JSON evaluation reports. Class indices are 1-based in the file.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::config::write_json;
use crate::io::predictions::PredictionRow;
use crate::metrics::{evaluate_posteriors, EvalReport};
use crate::model::LabeledEmbeddingSet;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassEntry {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub auroc_excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportFile {
    pub num_samples: usize,
    pub num_classes: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub balanced_accuracy: f64,
    pub ece: f64,
    pub ece_bins: usize,
    pub macro_auroc: f64,
    pub auroc_excluded_classes: Vec<usize>,
    pub gate_rate: f64,
    pub per_class: Vec<ClassEntry>,
    /// Seed of the run that produced the predictions, when known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ReportFile {
    pub fn new(report: &EvalReport, num_samples: usize, gate_rate: f64, seed: Option<u64>) -> Self {
        Self {
            num_samples,
            num_classes: report.per_class.len(),
            accuracy: report.accuracy,
            macro_f1: report.macro_f1,
            balanced_accuracy: report.balanced_accuracy,
            ece: report.ece,
            ece_bins: report.num_bins,
            macro_auroc: report.m_auc,
            auroc_excluded_classes: report.auroc_excluded.iter().map(|k| k + 1).collect(),
            gate_rate,
            per_class: report
                .per_class
                .iter()
                .enumerate()
                .map(|(k, s)| ClassEntry {
                    class: k + 1,
                    precision: s.precision,
                    recall: s.recall,
                    f1: s.f1,
                    support: s.support,
                    auroc_excluded: report.auroc_excluded.contains(&k),
                })
                .collect(),
            seed,
        }
    }
}

/// Scores prediction rows against the labels of `truth`, matched by id.
pub fn evaluate_rows(
    rows: &[PredictionRow],
    truth: &LabeledEmbeddingSet,
    bins: usize,
    seed: Option<u64>,
) -> Result<ReportFile> {
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    let c = truth.num_classes();
    let by_id: std::collections::HashMap<&str, usize> =
        truth.records().iter().map(|r| (r.id.as_str(), r.label)).collect();
    let mut seen = std::collections::HashSet::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    let mut posteriors = Vec::with_capacity(rows.len());
    let mut y_hat = Vec::with_capacity(rows.len());
    for r in rows {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::DuplicateId(r.id.clone()));
        }
        let label = *by_id
            .get(r.id.as_str())
            .ok_or_else(|| Error::Schema(format!("prediction {} has no label", r.id)))?;
        if r.p_final.len() != c {
            return Err(Error::Schema(format!(
                "prediction {} has {} classes, labels have {c}",
                r.id,
                r.p_final.len()
            )));
        }
        labels.push(label);
        posteriors.push(r.posterior()?);
        y_hat.push(r.y_hat);
    }
    let report = evaluate_posteriors(&posteriors, &y_hat, &labels, c, bins)?;
    let gate_rate = rows.iter().filter(|r| r.gate).count() as f64 / rows.len() as f64;
    Ok(ReportFile::new(&report, rows.len(), gate_rate, seed))
}

pub fn write_report(report: &ReportFile, path: &Path) -> Result<()> {
    write_json(report, path)
}
