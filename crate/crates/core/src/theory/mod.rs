//! Scalar minimax testbed with a closed-form primal risk, used to check the
//! convergence rate of the federated primal-dual loop, plus the
//! error-rate-parity implication probe.

mod probe;
mod rate;
mod testbed;

pub use probe::{implication_probe, probe_sweep, random_equal_error_table, JointTable, ProbeReport, ProbeSweep};
pub use rate::{fit_rate, run_rate_experiment, write_gap_csv, GapPoint, NoiseModel, RateExperiment};
pub use testbed::{
    estimate_pl_constant, gamma, measure_dissimilarity, minimize_scalar, primal_risk, solve_primal_star,
    theory_constants, PrimalBase, TestbedClient, TestbedProblem, TheoryConstants,
};
