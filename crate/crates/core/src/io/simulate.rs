//! The `simulate` driver: generate a two-expert scenario, run the selected
//! checks, and write their tables.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::gate::GateConfig;
use crate::io::bank::write_bank;
use crate::io::config::{write_gate_config, write_json};
use crate::io::predictions::write_predictions;
use crate::io::tables::{encode_checks, encode_sweep, encode_truth, write_bytes, CheckRow, CheckStatus};
use crate::lab::checks::{
    bayes_dominance, check_alpha_bound, check_gap_condition, check_invariance, has_interior_peak,
    regret_check, risk_decomposition, risk_reduction_check, threshold_sweep, SweepParam, SweepResult,
};
use crate::lab::scenario::{gen_two_expert_scenario, ScenarioConfig, TwoExpertScenario};

/// Trials used by the α-bound check.
pub const ALPHA_TRIALS: usize = 10_000;
/// One-sided slack allowed when another selector's empirical risk beats the Bayes selector.
pub const DOMINANCE_TOLERANCE: f64 = 0.02;
/// θ_gate values of the sweep check.
pub const THETA_GRID: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];

/// The gate used by the α-bound check: the scenario's β and δ with
/// `θ_gate = 0.5`, `m_sim = 0.6`, `α_low = 0.4`, a setting where the bound is met.
pub fn alpha_reference(gate: &GateConfig) -> GateConfig {
    GateConfig {
        theta_gate: 0.5,
        m_sim: 0.6,
        alpha_low: 0.4,
        ..*gate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Check {
    Invariance,
    RiskDecomposition,
    AlphaBound,
    GapCondition,
    Regret,
    RiskReduction,
    BayesDominance,
    Sweep,
}

impl Check {
    pub const ALL: [Check; 8] = [
        Check::Invariance,
        Check::RiskDecomposition,
        Check::AlphaBound,
        Check::GapCondition,
        Check::Regret,
        Check::RiskReduction,
        Check::BayesDominance,
        Check::Sweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::Invariance => "invariance",
            Check::RiskDecomposition => "risk_decomposition",
            Check::AlphaBound => "alpha_bound",
            Check::GapCondition => "gap_condition",
            Check::Regret => "regret",
            Check::RiskReduction => "risk_reduction",
            Check::BayesDominance => "bayes_dominance",
            Check::Sweep => "sweep",
        }
    }

    /// Checks whose failure means the code is wrong rather than the data unlucky.
    fn is_identity(self) -> bool {
        matches!(
            self,
            Check::Invariance | Check::RiskDecomposition | Check::AlphaBound | Check::GapCondition | Check::Regret
        )
    }

    /// Parses `all` or a comma-separated list of check names.
    pub fn parse_list(s: &str) -> Result<Vec<Check>> {
        if s.trim() == "all" {
            return Ok(Check::ALL.to_vec());
        }
        s.split(',').map(|p| p.trim().parse()).collect()
    }
}

impl FromStr for Check {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Check::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown check {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutcome {
    pub scenario: TwoExpertScenario,
    pub rows: Vec<CheckRow>,
    pub sweep: Option<SweepResult>,
}

impl SimulationOutcome {
    pub fn failures(&self) -> Vec<&CheckRow> {
        self.rows.iter().filter(|r| r.status == CheckStatus::Fail).collect()
    }
}

pub fn run_simulation(cfg: &ScenarioConfig, checks: &[Check]) -> Result<SimulationOutcome> {
    let s = gen_two_expert_scenario(cfg)?;
    let labels = s.test.data.labels();
    let mut rows = Vec::new();
    let mut sweep = None;
    for &check in checks {
        let name = check.name();
        match check {
            Check::Invariance => {
                let r = check_invariance(&s.records);
                rows.push(CheckRow::new(name, "closed_gate_records", r.closed, CheckStatus::Info));
                rows.push(CheckRow::new(
                    name,
                    "violations",
                    r.violations.len(),
                    CheckStatus::from_bool(r.violations.is_empty()),
                ));
            }
            Check::RiskDecomposition => {
                let d = risk_decomposition(&s.records, &labels)?;
                rows.push(CheckRow::new(name, "gate_rate", d.gate_rate, CheckStatus::Info));
                rows.push(CheckRow::new(name, "lhs", d.lhs, CheckStatus::Info));
                rows.push(CheckRow::new(
                    name,
                    "abs_difference",
                    (d.lhs - d.rhs).abs(),
                    CheckStatus::from_bool((d.lhs - d.rhs).abs() <= 1e-12),
                ));
            }
            Check::AlphaBound => match check_alpha_bound(&alpha_reference(&s.gate), ALPHA_TRIALS, cfg.seed) {
                Ok(r) => {
                    rows.push(CheckRow::new(name, "bound", r.bound, CheckStatus::Info));
                    rows.push(CheckRow::new(
                        name,
                        "counterexamples",
                        r.counterexamples,
                        CheckStatus::from_bool(r.counterexamples == 0),
                    ));
                }
                Err(Error::PreconditionNotMet(msg)) => {
                    rows.push(CheckRow::new(name, "precondition", msg, CheckStatus::Vacuous));
                }
                Err(e) => return Err(e),
            },
            Check::GapCondition => {
                let r = check_gap_condition(&s.truth, &s.records, 0.0)?;
                rows.push(CheckRow::new(name, "premise_samples", r.premise, CheckStatus::Info));
                let status = if r.premise == 0 {
                    CheckStatus::Vacuous
                } else {
                    CheckStatus::from_bool(r.violations == 0)
                };
                rows.push(CheckRow::new(name, "violations", r.violations, status));
                if let Some(a) = r.agreement_rate() {
                    rows.push(CheckRow::new(name, "bayes_agreement", a, CheckStatus::Info));
                }
            }
            Check::Regret => {
                let n = s.records.len();
                let practical: Vec<bool> = s.records.iter().map(|r| r.signals.gate).collect();
                for (gate_name, gate) in [
                    ("practical", practical),
                    ("classifier", vec![false; n]),
                    ("similarity", vec![true; n]),
                ] {
                    let r = regret_check(&s.truth, &gate)?;
                    rows.push(CheckRow::new(name, &format!("{gate_name}_misrank_prob"), r.misrank_prob, CheckStatus::Info));
                    rows.push(CheckRow::new(
                        name,
                        &format!("{gate_name}_excess_risk"),
                        r.excess_risk,
                        CheckStatus::from_bool(r.excess_risk <= r.misrank_prob + 1e-12),
                    ));
                }
            }
            Check::RiskReduction => {
                let r = risk_reduction_check(&s.records, &labels, 0.1, 0.2)?;
                rows.push(CheckRow::new(name, "gate_rate", r.gate_rate, CheckStatus::Info));
                rows.push(CheckRow::new(name, "epsilon", r.epsilon, CheckStatus::Info));
                rows.push(CheckRow::new(name, "risk_classifier", r.risk_classifier, CheckStatus::Info));
                let status = if r.premise_met {
                    CheckStatus::from_bool(r.holds)
                } else {
                    CheckStatus::Vacuous
                };
                rows.push(CheckRow::new(name, "risk_gated", r.risk_gated, status));
            }
            Check::BayesDominance => {
                let r = bayes_dominance(&s.truth, &s.records, DOMINANCE_TOLERANCE)?;
                let bayes = r.selectors[0].expected_risk;
                for sel in &r.selectors {
                    let ok = sel.expected_risk >= bayes && !r.violations.contains(&sel.name);
                    rows.push(CheckRow::new(
                        name,
                        &format!("{}_expected_risk", sel.name),
                        sel.expected_risk,
                        CheckStatus::from_bool(ok),
                    ));
                    rows.push(CheckRow::new(
                        name,
                        &format!("{}_empirical_risk", sel.name),
                        sel.empirical_risk,
                        CheckStatus::Info,
                    ));
                }
            }
            Check::Sweep => {
                let grid = [(SweepParam::ThetaGate, THETA_GRID.to_vec())];
                let r = threshold_sweep(&s.test.data, &s.bank, &s.gate, &grid, &labels)?;
                let peak = has_interior_peak(&r.accuracy_curve());
                rows.push(CheckRow::new(name, "interior_accuracy_peak", peak, CheckStatus::from_bool(peak)));
                sweep = Some(r);
            }
        }
    }
    Ok(SimulationOutcome { scenario: s, rows, sweep })
}

/// Runs [`run_simulation`], writes `checks.csv`, `predictions.csv`, `truth.csv`,
/// `bank.json`, `gate.json`, `config.json` and (when swept) `sweep.csv`, then
/// fails with an invariant violation if an identity check failed.
pub fn run_simulation_to_dir(cfg: &ScenarioConfig, checks: &[Check], out_dir: &Path) -> Result<SimulationOutcome> {
    let outcome = run_simulation(cfg, checks)?;
    fs::create_dir_all(out_dir)?;
    let s = &outcome.scenario;
    write_bytes(encode_checks(&outcome.rows)?, &out_dir.join("checks.csv"))?;
    write_predictions(&s.records, &out_dir.join("predictions.csv"))?;
    write_bytes(encode_truth(&s.truth)?, &out_dir.join("truth.csv"))?;
    write_bank(&s.bank, &out_dir.join("bank.json"))?;
    write_gate_config(&s.gate, &out_dir.join("gate.json"))?;
    write_json(cfg, &out_dir.join("config.json"))?;
    if let Some(sweep) = &outcome.sweep {
        write_bytes(encode_sweep(sweep)?, &out_dir.join("sweep.csv"))?;
    }
    let broken: Vec<String> = outcome
        .failures()
        .into_iter()
        .filter(|r| checks.iter().any(|c| c.name() == r.check && c.is_identity()))
        .map(|r| format!("{}/{}", r.check, r.quantity))
        .collect();
    if !broken.is_empty() {
        return Err(Error::InvariantViolation(format!("failed checks: {}", broken.join(", "))));
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_lists() {
        assert_eq!(Check::parse_list("all").unwrap().len(), 8);
        assert_eq!(
            Check::parse_list("regret, sweep").unwrap(),
            vec![Check::Regret, Check::Sweep]
        );
        assert!(Check::parse_list("regret,nope").is_err());
    }
}
