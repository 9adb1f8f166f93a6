//! End-to-end run: split, build the bank, tune, predict, evaluate, and write artifacts.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::{build_bank_with, FitOptions, PrototypeBank};
use crate::error::{Error, Result};
use crate::gate::{predict_batch, GateConfig};
use crate::io::bank::write_bank;
use crate::io::config::{write_gate_config, write_json, TuneGrid};
use crate::io::embeddings::EmbeddingTable;
use crate::io::predictions::{write_predictions, PredictionRow};
use crate::io::report::{evaluate_rows, write_report, ReportFile};
use crate::io::split::stratified_split;
use crate::io::tables::{encode_tune_table, write_bytes};
use crate::io::tune::{tune, TuneOutcome};
use crate::metrics::DEFAULT_BINS;
use crate::model::PredictionRecord;

/// Everything `run` needs besides the data. All randomness derives from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub k: usize,
    pub kappa: f64,
    /// Starting τ_sim; replaced by the tuned value.
    pub tau_sim: f64,
    pub seed: u64,
    pub restarts: usize,
    pub max_iters: usize,
    pub val_fraction: f64,
    pub grid: TuneGrid,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entropy_max: Option<f64>,
    pub bins: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: 3,
            kappa: 20.0,
            tau_sim: 0.1,
            seed: 0,
            restarts: 5,
            max_iters: 100,
            val_fraction: 0.1,
            grid: TuneGrid::default(),
            entropy_max: None,
            bins: DEFAULT_BINS,
        }
    }
}

impl PipelineConfig {
    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            max_iters: self.max_iters,
            restarts: self.restarts,
            ..FitOptions::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.restarts == 0 || self.max_iters == 0 {
            return Err(Error::Config("k, restarts and max_iters must be positive".into()));
        }
        if self.bins == 0 {
            return Err(Error::Config("bins must be positive".into()));
        }
        self.grid.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub bank: PrototypeBank,
    pub tuning: TuneOutcome,
    pub records: Vec<PredictionRecord>,
    /// `None` when the test labels are withheld.
    pub report: Option<ReportFile>,
    pub train_size: usize,
    pub val_size: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    seed: u64,
    config: &'a PipelineConfig,
    num_classes: usize,
    dim: usize,
    train_size: usize,
    val_size: usize,
    test_size: usize,
    test_labeled: bool,
    tuned_gate: &'a GateConfig,
    tuned_tau_sim: f64,
    artifacts: Vec<&'static str>,
}

/// Runs the whole procedure in memory.
pub fn run_pipeline(train: &EmbeddingTable, test: &EmbeddingTable, cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    cfg.validate()?;
    if !train.labeled {
        return Err(Error::Schema("training data must be labeled".into()));
    }
    let (tr, te) = (&train.data, &test.data);
    if tr.num_classes() != te.num_classes() || tr.dim() != te.dim() {
        return Err(Error::Schema(format!(
            "train has C={} D={}, test has C={} D={}",
            tr.num_classes(),
            tr.dim(),
            te.num_classes(),
            te.dim()
        )));
    }
    let (train_idx, val_idx) = stratified_split(tr, cfg.val_fraction, cfg.seed)?;
    let fit = tr.subset(&train_idx)?;
    let val = tr.subset(&val_idx)?;
    let bank = build_bank_with(&fit, cfg.k, cfg.kappa, cfg.tau_sim, cfg.seed, &cfg.fit_options())?;
    let base = GateConfig {
        entropy_max: cfg.entropy_max,
        ..GateConfig::default()
    };
    let tuning = tune(&val, &bank, &cfg.grid, &base)?;
    let bank = bank.with_tau_sim(tuning.best_tau_sim)?;
    let records = predict_batch(te, &bank, &tuning.best)?;
    let report = if test.labeled {
        let rows: Vec<PredictionRow> = records.iter().map(PredictionRow::from).collect();
        Some(evaluate_rows(&rows, te, cfg.bins, Some(cfg.seed))?)
    } else {
        None
    };
    Ok(PipelineOutcome {
        bank,
        tuning,
        records,
        report,
        train_size: train_idx.len(),
        val_size: val_idx.len(),
    })
}

/// Runs the pipeline and writes `bank.json`, `gate.json`, `tune_table.csv`,
/// `predictions.csv`, `report.json` (labeled test data only) and `manifest.json`.
pub fn run_pipeline_to_dir(
    train: &EmbeddingTable,
    test: &EmbeddingTable,
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<PipelineOutcome> {
    let outcome = run_pipeline(train, test, cfg)?;
    fs::create_dir_all(out_dir)?;
    write_bank(&outcome.bank, &out_dir.join("bank.json"))?;
    write_gate_config(&outcome.tuning.best, &out_dir.join("gate.json"))?;
    write_bytes(encode_tune_table(&outcome.tuning)?, &out_dir.join("tune_table.csv"))?;
    write_predictions(&outcome.records, &out_dir.join("predictions.csv"))?;
    let mut artifacts = vec!["bank.json", "gate.json", "tune_table.csv", "predictions.csv"];
    if let Some(report) = &outcome.report {
        write_report(report, &out_dir.join("report.json"))?;
        artifacts.push("report.json");
    }
    artifacts.push("manifest.json");
    let manifest = Manifest {
        seed: cfg.seed,
        config: cfg,
        num_classes: test.data.num_classes(),
        dim: test.data.dim(),
        train_size: outcome.train_size,
        val_size: outcome.val_size,
        test_size: test.data.len(),
        test_labeled: test.labeled,
        tuned_gate: &outcome.tuning.best,
        tuned_tau_sim: outcome.tuning.best_tau_sim,
        artifacts,
    };
    write_json(&manifest, &out_dir.join("manifest.json"))?;
    Ok(outcome)
}
