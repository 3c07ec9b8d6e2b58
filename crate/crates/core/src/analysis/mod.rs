//! Analysis instruments: risk estimators, firing-rate maps, early exit.

pub mod early_exit;
pub mod risk;
pub mod sfr;

pub use early_exit::{early_exit_eval, EarlyExitReport};
pub use risk::{bayes_distilled_risk, empirical_risk, variance_experiment, RiskReport, ToyDistribution};
pub use sfr::{sfr_map, SfrMap};
