use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use protogate::cluster::{build_bank_with, FitOptions};
use protogate::gate::{predict_batch, GateConfig};
use protogate::io::bank::{read_bank, write_bank};
use protogate::io::config::{read_gate_config, read_tune_grid, write_gate_config, Objective, TuneGrid};
use protogate::io::embeddings::{read_embedding_table, read_embeddings, EmbeddingFormat};
use protogate::io::pipeline::{run_pipeline_to_dir, PipelineConfig};
use protogate::io::predictions::{read_predictions, write_predictions};
use protogate::io::report::{evaluate_rows, write_report};
use protogate::io::simulate::{run_simulation_to_dir, Check};
use protogate::io::tables::{encode_sweep, encode_tune_table, write_bytes};
use protogate::io::tune::tune;
use protogate::lab::checks::{threshold_sweep, SweepParam};
use protogate::lab::scenario::ScenarioConfig;
use protogate::metrics::DEFAULT_BINS;
use protogate::{Error, Result};

/// Teacher-guided prototype retrieval with confidence-gated fusion.
#[derive(Parser)]
#[command(name = "protogate", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Input {
    /// Embedding file (CSV, or PGEB binary for `.bin`)
    #[arg(long)]
    embeddings: PathBuf,
    /// Override the format implied by the file extension
    #[arg(long, value_parser = ["csv", "bin"])]
    format: Option<String>,
}

impl Input {
    fn format(&self) -> Result<EmbeddingFormat> {
        format_of(&self.embeddings, self.format.as_deref())
    }
}

fn format_of(path: &Path, explicit: Option<&str>) -> Result<EmbeddingFormat> {
    explicit.map_or_else(|| Ok(EmbeddingFormat::from_path(path)), str::parse)
}

#[derive(Subcommand)]
enum Command {
    /// Cluster each class of a labeled embedding file into a prototype bank
    BuildBank {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 20.0)]
        kappa: f64,
        #[arg(long, default_value_t = 0.1)]
        tau_sim: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        restarts: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict with the gated dual-path rule
    Infer {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        bank: PathBuf,
        /// Gate configuration JSON; defaults are used when omitted
        #[arg(long)]
        gate: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid-search the gate and tau_sim on a validation file
    Tune {
        #[arg(long)]
        val: PathBuf,
        #[arg(long, value_parser = ["csv", "bin"])]
        format: Option<String>,
        #[arg(long)]
        bank: PathBuf,
        /// Grid JSON; the built-in grid is used when omitted
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Overrides the grid file's objective
        #[arg(long, value_parser = ["balacc", "accuracy", "macro_f1"])]
        objective: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the best gate configuration here
        #[arg(long)]
        best: Option<PathBuf>,
        /// Also write the bank with the tuned tau_sim here
        #[arg(long)]
        tuned_bank: Option<PathBuf>,
    },
    /// Score a prediction file against a labeled embedding file
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, value_parser = ["csv", "bin"])]
        format: Option<String>,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic scenario and run the risk checks on it
    Simulate {
        #[arg(long, default_value = "two-expert", value_parser = ["two-expert"])]
        scenario: String,
        /// Scenario configuration JSON; defaults are used when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// `all` or a comma-separated subset of the check names
        #[arg(long, default_value = "all")]
        checks: String,
        /// Overrides the configuration's seed
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a gate over a grid of one or more parameters
    Sweep {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        gate: Option<PathBuf>,
        /// Parameter to vary; repeat together with --values for a product grid
        #[arg(long, required = true)]
        param: Vec<String>,
        /// Comma-separated values for the matching --param
        #[arg(long, required = true)]
        values: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split, build, tune, predict and evaluate in one go
    Run {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_parser = ["csv", "bin"])]
        format: Option<String>,
        /// Pipeline configuration JSON; defaults are used when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configuration's seed
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn gate_or_default(path: Option<&Path>) -> Result<GateConfig> {
    path.map_or_else(|| Ok(GateConfig::default()), read_gate_config)
}

fn parse_values(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad sweep value {v:?}: {e}")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildBank {
            input,
            k,
            kappa,
            tau_sim,
            seed,
            restarts,
            out,
        } => {
            let data = read_embeddings(&input.embeddings, input.format()?)?;
            let opts = FitOptions {
                restarts,
                ..FitOptions::default()
            };
            if restarts == 0 {
                return Err(Error::Config("restarts must be at least 1".into()));
            }
            let bank = build_bank_with(&data, k, kappa, tau_sim, seed, &opts)?;
            write_bank(&bank, &out)?;
            let total: usize = bank.prototypes().iter().map(Vec::len).sum();
            println!("bank: {} classes, {total} prototypes -> {}", bank.num_classes(), out.display());
        }
        Command::Infer {
            input,
            bank,
            gate,
            out,
        } => {
            let table = read_embedding_table(&input.embeddings, input.format()?)?;
            let bank = read_bank(&bank)?;
            let cfg = gate_or_default(gate.as_deref())?;
            let records = predict_batch(&table.data, &bank, &cfg)?;
            write_predictions(&records, &out)?;
            let gated = records.iter().filter(|r| r.signals.gate).count();
            println!("predictions: {} records, {gated} gated -> {}", records.len(), out.display());
        }
        Command::Tune {
            val,
            format,
            bank,
            grid,
            objective,
            out,
            best,
            tuned_bank,
        } => {
            let data = read_embeddings(&val, format_of(&val, format.as_deref())?)?;
            let bank = read_bank(&bank)?;
            let mut grid = grid.as_deref().map_or_else(|| Ok(TuneGrid::default()), read_tune_grid)?;
            if let Some(o) = objective {
                grid.objective = o.parse::<Objective>()?;
            }
            let outcome = tune(&data, &bank, &grid, &GateConfig::default())?;
            write_bytes(encode_tune_table(&outcome)?, &out)?;
            if let Some(path) = best {
                write_gate_config(&outcome.best, &path)?;
            }
            if let Some(path) = tuned_bank {
                write_bank(&bank.with_tau_sim(outcome.best_tau_sim)?, &path)?;
            }
            let b = outcome.best_row();
            println!(
                "tune: {} grid points, best objective {} (theta_gate={} beta={} m_sim={} tau_sim={} delta={} alpha_low={}) -> {}",
                outcome.rows.len(),
                b.objective,
                b.theta_gate,
                b.beta,
                b.m_sim,
                b.tau_sim,
                b.delta,
                b.alpha_low,
                out.display()
            );
        }
        Command::Evaluate {
            pred,
            labels,
            format,
            bins,
            out,
        } => {
            let rows = read_predictions(&pred)?;
            let truth = read_embeddings(&labels, format_of(&labels, format.as_deref())?)?;
            let report = evaluate_rows(&rows, &truth, bins, None)?;
            write_report(&report, &out)?;
            println!(
                "report: accuracy {:.4}, balanced accuracy {:.4}, macro F1 {:.4}, ECE {:.4}, macro AUROC {:.4} -> {}",
                report.accuracy,
                report.balanced_accuracy,
                report.macro_f1,
                report.ece,
                report.macro_auroc,
                out.display()
            );
        }
        Command::Simulate {
            scenario: _,
            config,
            checks,
            seed,
            out,
        } => {
            let mut cfg: ScenarioConfig = config.as_deref().map_or_else(|| Ok(ScenarioConfig::default()), read_json)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let checks = Check::parse_list(&checks)?;
            let outcome = run_simulation_to_dir(&cfg, &checks, &out)?;
            for r in &outcome.rows {
                println!("{:<20} {:<32} {:<24} {}", r.check, r.quantity, r.value, r.status.as_str());
            }
            println!("simulation artifacts -> {}", out.display());
        }
        Command::Sweep {
            input,
            bank,
            gate,
            param,
            values,
            out,
        } => {
            if param.len() != values.len() {
                return Err(Error::Config(format!(
                    "{} --param flags but {} --values lists",
                    param.len(),
                    values.len()
                )));
            }
            let grid = param
                .iter()
                .zip(&values)
                .map(|(p, v)| Ok((p.parse::<SweepParam>()?, parse_values(v)?)))
                .collect::<Result<Vec<_>>>()?;
            let data = read_embeddings(&input.embeddings, input.format()?)?;
            let bank = read_bank(&bank)?;
            let cfg = gate_or_default(gate.as_deref())?;
            let result = threshold_sweep(&data, &bank, &cfg, &grid, &data.labels())?;
            write_bytes(encode_sweep(&result)?, &out)?;
            println!("sweep: {} grid points -> {}", result.rows.len(), out.display());
        }
        Command::Run {
            train,
            test,
            format,
            config,
            seed,
            out,
        } => {
            let mut cfg: PipelineConfig = config.as_deref().map_or_else(|| Ok(PipelineConfig::default()), read_json)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let train = read_embedding_table(&train, format_of(&train, format.as_deref())?)?;
            let test = read_embedding_table(&test, format_of(&test, format.as_deref())?)?;
            let outcome = run_pipeline_to_dir(&train, &test, &cfg, &out)?;
            println!(
                "run: train {} / val {} / test {}, tuned tau_sim {}",
                outcome.train_size,
                outcome.val_size,
                outcome.records.len(),
                outcome.tuning.best_tau_sim
            );
            match &outcome.report {
                Some(r) => println!(
                    "test: accuracy {:.4}, balanced accuracy {:.4}, gate rate {:.4}",
                    r.accuracy, r.balanced_accuracy, r.gate_rate
                ),
                None => eprintln!("notice: test labels withheld; predictions written, report skipped"),
            }
            println!("artifacts -> {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_internal() { 2 } else { 1 })
        }
    }
}
