//! Plot-ready CSV tables: tuning results, sweeps, scenario truth and check summaries.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::tune::TuneOutcome;
use crate::lab::checks::SweepResult;
use crate::lab::scenario::ScenarioTruth;

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn encode_tune_table(outcome: &TuneOutcome) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "theta_gate",
        "beta",
        "m_sim",
        "tau_sim",
        "delta",
        "alpha_low",
        "gate_rate",
        "accuracy",
        "balanced_accuracy",
        "macro_f1",
        "objective",
        "best",
    ])
    .map_err(io)?;
    for (i, r) in outcome.rows.iter().enumerate() {
        let mut row: Vec<String> = [
            r.theta_gate,
            r.beta,
            r.m_sim,
            r.tau_sim,
            r.delta,
            r.alpha_low,
            r.gate_rate,
            r.accuracy,
            r.balanced_accuracy,
            r.macro_f1,
            r.objective,
        ]
        .iter()
        .map(f64::to_string)
        .collect();
        row.push(u8::from(i == outcome.best_index).to_string());
        w.write_record(&row).map_err(io)?;
    }
    finish(w)
}

pub fn encode_sweep(result: &SweepResult) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = result
        .params
        .iter()
        .map(|p| p.name())
        .chain(["gate_rate", "gated_accuracy", "overall_accuracy", "balanced_accuracy"]);
    w.write_record(header).map_err(io)?;
    for r in &result.rows {
        let mut row: Vec<String> = r.settings.iter().map(|(_, v)| v.to_string()).collect();
        row.push(r.gate_rate.to_string());
        row.push(r.gated_accuracy.map_or_else(String::new, |a| a.to_string()));
        row.push(r.overall_accuracy.to_string());
        row.push(r.balanced_accuracy.to_string());
        w.write_record(&row).map_err(io)?;
    }
    finish(w)
}

pub fn encode_truth(truth: &ScenarioTruth) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "label", "r_cls", "r_sim", "eps_cls", "eps_sim", "bayes_gate", "ambiguous"])
        .map_err(io)?;
    for (i, r) in truth.data.records().iter().enumerate() {
        w.write_record([
            r.id.clone(),
            (r.label + 1).to_string(),
            truth.r_cls[i].to_string(),
            truth.r_sim[i].to_string(),
            truth.eps_cls[i].to_string(),
            truth.eps_sim[i].to_string(),
            u8::from(truth.bayes_gate[i]).to_string(),
            u8::from(truth.ambiguous[i]).to_string(),
        ])
        .map_err(io)?;
    }
    finish(w)
}

/// One line of a check summary.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub check: String,
    pub quantity: String,
    pub value: String,
    pub status: CheckStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    /// The check's premise did not hold, so it says nothing.
    Vacuous,
    /// Informational value with no pass criterion.
    Info,
}

impl CheckStatus {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "fail",
            CheckStatus::Vacuous => "vacuous",
            CheckStatus::Info => "info",
        }
    }
}

impl CheckRow {
    pub fn new(check: &str, quantity: &str, value: impl ToString, status: CheckStatus) -> Self {
        Self {
            check: check.to_string(),
            quantity: quantity.to_string(),
            value: value.to_string(),
            status,
        }
    }
}

pub fn encode_checks(rows: &[CheckRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["check", "quantity", "value", "status"]).map_err(io)?;
    for r in rows {
        w.write_record([r.check.as_str(), &r.quantity, &r.value, r.status.as_str()])
            .map_err(io)?;
    }
    finish(w)
}

pub fn write_bytes(bytes: Vec<u8>, path: &Path) -> Result<()> {
    fs::write(path, bytes)?;
    Ok(())
}
