//! Fairness-constrained federated learning.
//!
//! The crate simulates a federation of clients that jointly train a binary
//! classifier while keeping the per-group cross-entropy of a binary
//! sensitive attribute balanced. Local training minimizes an augmented
//! Lagrangian of the group-loss equality constraint and the server averages
//! both the model and the multiplier. FedAvg, FPFL and FairFed are provided
//! as baselines, together with group-fairness metrics, Dirichlet label-skew
//! partitioning and a scalar minimax testbed for convergence-rate checks.
//!
//! Module map:
//!
//! * [`data`]: validated datasets, group views and batch sampling
//! * [`fairness`]: DPD / EOD metrics and the smooth group-loss surrogate
//! * [`model`]: two-logit linear and MLP classifiers with analytic gradients
//! * [`gradcheck`]: randomized finite-difference check of those gradients
//! * [`partition`]: synthetic biased data and Dirichlet partitioning
//! * [`engine`]: the federated round loop and its baselines
//! * [`theory`]: the minimax testbed, rate fitting and the implication probe
//! * [`io`]: run configuration, CSV readers/writers and comparison reports

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod engine;
pub mod error;
pub mod fairness;
pub mod gradcheck;
pub mod io;
pub mod model;
pub mod partition;
pub mod rng;
pub mod theory;

pub use data::{Batch, GroupView, LabeledDataset};
pub use engine::{Algorithm, DualState, FederationConfig, MetricsLog, RoundRecord, SchedulerMode};
pub use error::{Error, Result};
pub use fairness::{FairnessReport, SurrogateGap};
pub use model::{Architecture, CeMode, GradVector, LossConfig, ModelParams, SingleGroupPolicy};
pub use partition::{PartitionPlan, SynthConfig};
