//! Synthetic worlds with known ground truth and executable checks of the
//! gate's risk properties.

pub mod checks;
pub mod scenario;
pub mod vmf;

pub use checks::{
    check_alpha_bound, check_gap_condition, check_invariance, regret_check, risk_decomposition,
    threshold_sweep, SweepParam, SweepResult,
};
pub use scenario::{bayes_gate, gen_two_expert_scenario, ScenarioConfig, ScenarioTruth, TwoExpertWorld};
pub use vmf::{sample_vmf, VmfParams};
