//! JSON configuration files: gate thresholds and tuning grids.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gate::GateConfig;

/// Metric maximized by [`super::tune::tune`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Objective {
    #[default]
    #[serde(rename = "balacc")]
    BalancedAccuracy,
    #[serde(rename = "accuracy")]
    Accuracy,
    #[serde(rename = "macro_f1")]
    MacroF1,
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "balacc" => Ok(Objective::BalancedAccuracy),
            "accuracy" => Ok(Objective::Accuracy),
            "macro_f1" => Ok(Objective::MacroF1),
            other => Err(Error::Config(format!("unknown objective {other:?}"))),
        }
    }
}

/// Candidate values for every tunable inference parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneGrid {
    pub theta_gate: Vec<f64>,
    pub beta: Vec<f64>,
    pub m_sim: Vec<f64>,
    pub tau_sim: Vec<f64>,
    pub delta: Vec<f64>,
    pub alpha_low: Vec<f64>,
    pub objective: Objective,
}

impl Default for TuneGrid {
    fn default() -> Self {
        Self {
            theta_gate: vec![0.5, 0.6, 0.7, 0.8, 0.9],
            beta: vec![0.6, 0.7, 0.8, 0.9],
            m_sim: vec![0.1, 0.2, 0.3, 0.5],
            tau_sim: vec![0.05, 0.1, 0.2, 0.5, 1.0],
            delta: vec![0.05, 0.1, 0.2],
            alpha_low: vec![0.9],
            objective: Objective::BalancedAccuracy,
        }
    }
}

impl TuneGrid {
    /// A grid containing exactly one configuration.
    pub fn single(cfg: &GateConfig, tau_sim: f64) -> Self {
        Self {
            theta_gate: vec![cfg.theta_gate],
            beta: vec![cfg.beta],
            m_sim: vec![cfg.m_sim],
            tau_sim: vec![tau_sim],
            delta: vec![cfg.delta],
            alpha_low: vec![cfg.alpha_low],
            objective: Objective::BalancedAccuracy,
        }
    }

    pub fn len(&self) -> usize {
        self.theta_gate.len()
            * self.beta.len()
            * self.m_sim.len()
            * self.tau_sim.len()
            * self.delta.len()
            * self.alpha_low.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let axes = [
            ("theta_gate", &self.theta_gate),
            ("beta", &self.beta),
            ("m_sim", &self.m_sim),
            ("tau_sim", &self.tau_sim),
            ("delta", &self.delta),
            ("alpha_low", &self.alpha_low),
        ];
        for (name, values) in axes {
            if values.is_empty() {
                return Err(Error::Config(format!("grid axis {name} is empty")));
            }
        }
        if let Some(t) = self.tau_sim.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(Error::Config(format!("tau_sim = {t} must be positive")));
        }
        for cfg in self.gate_configs(&GateConfig::default()) {
            cfg.validate()?;
        }
        Ok(())
    }

    /// Every gate configuration of the grid (without τ_sim), in lexicographic order.
    pub fn gate_configs(&self, base: &GateConfig) -> Vec<GateConfig> {
        let mut out = Vec::with_capacity(self.len() / self.tau_sim.len().max(1));
        for &theta_gate in &self.theta_gate {
            for &beta in &self.beta {
                for &m_sim in &self.m_sim {
                    for &delta in &self.delta {
                        for &alpha_low in &self.alpha_low {
                            out.push(GateConfig {
                                theta_gate,
                                beta,
                                m_sim,
                                delta,
                                alpha_low,
                                entropy_max: base.entropy_max,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

pub fn read_gate_config(path: &Path) -> Result<GateConfig> {
    let text = fs::read_to_string(path)?;
    let cfg: GateConfig = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn write_gate_config(cfg: &GateConfig, path: &Path) -> Result<()> {
    write_json(cfg, path)
}

pub fn read_tune_grid(path: &Path) -> Result<TuneGrid> {
    let text = fs::read_to_string(path)?;
    let grid: TuneGrid = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    grid.validate()?;
    Ok(grid)
}

pub(crate) fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}
