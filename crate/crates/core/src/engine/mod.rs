//! The federated round loop.
//!
//! Each round broadcasts the global model and multiplier, runs local
//! training on every client (in parallel, each with its own batch streams),
//! and reduces the client updates in ascending client order. Results are
//! bitwise reproducible for a given master seed.

mod aggregate;
mod local;
mod schedule;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

pub use aggregate::{aggregate, fairfed_reweight, weighted_sum, ClientUpdate};
pub use local::{dual_update, grad_fpfl, local_train_fedavg, local_train_ffalm, local_train_fpfl, ClientStreams};
pub use schedule::scheduler_step;

use crate::data::{Batch, LabeledDataset};
use crate::error::{Error, Result};
use crate::fairness::{dpd, fairness_report, FairnessReport};
use crate::model::{task_loss, Architecture, LossConfig, ModelParams};
use crate::partition::PartitionPlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    FedAvg,
    Ffalm,
    Fpfl,
    FairFed,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::FedAvg, Algorithm::Ffalm, Algorithm::Fpfl, Algorithm::FairFed];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::FedAvg => "fedavg",
            Algorithm::Ffalm => "ffalm",
            Algorithm::Fpfl => "fpfl",
            Algorithm::FairFed => "fairfed",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown algorithm '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SchedulerMode {
    #[default]
    Empirical,
    Theory,
}

impl FromStr for SchedulerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "empirical" => Ok(SchedulerMode::Empirical),
            "theory" => Ok(SchedulerMode::Theory),
            _ => Err(Error::invalid(format!("unknown scheduler '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModelKind {
    #[default]
    Linear,
    Mlp {
        hidden: usize,
    },
}

impl ModelKind {
    pub fn architecture(&self, dim: usize) -> Architecture {
        match *self {
            ModelKind::Linear => Architecture::Linear { dim },
            ModelKind::Mlp { hidden } => Architecture::Mlp { dim, hidden },
        }
    }
}

/// Federation hyperparameters. Defaults follow the reference experiments:
/// batch 128, clip 1.0, primal rate 0.05 halved every 50 rounds, FFALM
/// penalty 2.0 with dual rate 2.0 grown by 1.05 per round, FPFL penalty 5.0
/// with dual rate 0.5, FairFed step 0.5.
#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub algorithm: Algorithm,
    pub n_clients: usize,
    pub local_steps: usize,
    pub rounds: usize,
    pub batch_size: usize,
    pub eta_w0: f64,
    pub lr_decay_step: usize,
    pub lr_decay_factor: f64,
    pub eta_lambda0: f64,
    pub dual_growth: f64,
    pub lambda0: f64,
    pub penalty_beta: f64,
    pub fpfl_beta: f64,
    pub fpfl_eta_lambda: f64,
    pub fairfed_beta: f64,
    pub clip_norm: f64,
    pub scheduler: SchedulerMode,
    pub theory_c_w: f64,
    pub theory_c_lambda: f64,
    pub seed: u64,
    pub model: ModelKind,
    pub loss: LossConfig,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            algorithm: Algorithm::FedAvg,
            n_clients: 10,
            local_steps: 4,
            rounds: 70,
            batch_size: 128,
            eta_w0: 0.05,
            lr_decay_step: 50,
            lr_decay_factor: 0.5,
            eta_lambda0: 2.0,
            dual_growth: 1.05,
            lambda0: 0.0,
            penalty_beta: 2.0,
            fpfl_beta: 5.0,
            fpfl_eta_lambda: 0.5,
            fairfed_beta: 0.5,
            clip_norm: 1.0,
            scheduler: SchedulerMode::Empirical,
            theory_c_w: 1.0,
            theory_c_lambda: 1.0,
            seed: 0,
            model: ModelKind::Linear,
            loss: LossConfig::default(),
        }
    }
}

impl FederationConfig {
    /// Check the invariants. A zero dual rate is accepted: it freezes the
    /// multiplier.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("eta_w0", self.eta_w0),
            ("lr_decay_factor", self.lr_decay_factor),
            ("clip_norm", self.clip_norm),
            ("fpfl_eta_lambda", self.fpfl_eta_lambda),
            ("theory_c_w", self.theory_c_w),
            ("theory_c_lambda", self.theory_c_lambda),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("eta_lambda0", self.eta_lambda0),
            ("penalty_beta", self.penalty_beta),
            ("fpfl_beta", self.fpfl_beta),
            ("fairfed_beta", self.fairfed_beta),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.dual_growth >= 1.0) || !self.dual_growth.is_finite() {
            return Err(Error::invalid(format!(
                "dual_growth must be at least 1, got {}",
                self.dual_growth
            )));
        }
        if !self.lambda0.is_finite() {
            return Err(Error::invalid("lambda0 must be finite"));
        }
        for (name, v) in [
            ("clients", self.n_clients),
            ("local_steps", self.local_steps),
            ("batch_size", self.batch_size),
            ("lr_decay_step", self.lr_decay_step),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        if let ModelKind::Mlp { hidden: 0 } = self.model {
            return Err(Error::invalid("hidden must be at least 1"));
        }
        Ok(())
    }

    fn initial_dual(&self) -> DualState {
        match self.algorithm {
            Algorithm::FedAvg | Algorithm::FairFed => DualState::None,
            Algorithm::Ffalm => DualState::Scalar(self.lambda0),
            Algorithm::Fpfl => DualState::Pair([self.lambda0.max(0.0); 2]),
        }
    }

    /// Learning rates actually applied in round `t`.
    pub fn round_rates(&self, t: usize) -> (f64, f64) {
        let (eta_w, eta_lambda) = scheduler_step(self, t);
        match self.algorithm {
            Algorithm::FedAvg | Algorithm::FairFed => (eta_w, 0.0),
            Algorithm::Ffalm => (eta_w, eta_lambda),
            Algorithm::Fpfl => (eta_w, self.fpfl_eta_lambda),
        }
    }
}

/// Multiplier state carried by the server.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DualState {
    None,
    Scalar(f64),
    Pair([f64; 2]),
}

impl DualState {
    /// Single number for logs: the multiplier itself, or the sum of the
    /// pair (zero when there is no multiplier).
    pub fn summary(&self) -> f64 {
        match *self {
            DualState::None => 0.0,
            DualState::Scalar(l) => l,
            DualState::Pair([a, b]) => a + b,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub eta_w: f64,
    pub eta_lambda: f64,
    pub lambda: f64,
    pub train_loss: f64,
    pub report: FairnessReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub records: Vec<RoundRecord>,
    pub final_params: ModelParams,
    pub final_dual: DualState,
    /// Aggregation coefficients used in the last round.
    pub final_coefficients: Vec<f64>,
}

impl MetricsLog {
    pub fn last(&self) -> &RoundRecord {
        self.records.last().expect("a log always holds the round-0 record")
    }
}

fn train_loss(w: &ModelParams, clients: &[LabeledDataset], p: &[f64], cfg: &FederationConfig) -> Result<f64> {
    let losses = clients
        .iter()
        .map(|ds| task_loss(w, ds, &Batch::full(ds), cfg.loss.ce))
        .collect::<Result<Vec<_>>>()?;
    Ok(weighted_sum(&losses, p))
}

/// Run `cfg.rounds` rounds over the clients of `plan` and evaluate the
/// aggregated model on `eval_ds` after every round (and once before the
/// first).
pub fn run_training(
    cfg: &FederationConfig,
    plan: &PartitionPlan,
    parent: &LabeledDataset,
    eval_ds: &LabeledDataset,
) -> Result<MetricsLog> {
    cfg.validate()?;
    if plan.n_clients() != cfg.n_clients {
        return Err(Error::invalid(format!(
            "partition has {} clients, configuration expects {}",
            plan.n_clients(),
            cfg.n_clients
        )));
    }
    plan.validate_against(parent.len())?;
    aggregate::check_coefficients(&plan.coefficients)?;
    if eval_ds.dim() != parent.dim() {
        return Err(Error::DimensionMismatch {
            expected: parent.dim(),
            got: eval_ds.dim(),
        });
    }
    let clients = plan
        .clients
        .iter()
        .map(|idx| parent.subset(idx))
        .collect::<Result<Vec<_>>>()?;
    let arch = cfg.model.architecture(parent.dim());
    let sample_share = plan.coefficients.clone();

    let mut w = ModelParams::init(arch, cfg.seed);
    let mut dual = cfg.initial_dual();
    let mut p = sample_share.clone();

    let evaluate = |round: usize, w: &ModelParams, dual: &DualState, rates: (f64, f64)| -> Result<RoundRecord> {
        Ok(RoundRecord {
            round,
            eta_w: rates.0,
            eta_lambda: rates.1,
            lambda: dual.summary(),
            train_loss: train_loss(w, &clients, &sample_share, cfg)?,
            report: fairness_report(w, eval_ds)?,
        })
    };

    let mut records = vec![evaluate(0, &w, &dual, (0.0, 0.0)).map_err(|e| e.in_round(0))?];
    for t in 1..=cfg.rounds {
        let rates = cfg.round_rates(t);
        let step = |(i, ds): (usize, &LabeledDataset)| -> Result<(ClientUpdate, Option<f64>)> {
            let streams = ClientStreams {
                seed: cfg.seed,
                round: t,
                client: i,
            };
            // FairFed clients report the DPD of the broadcast model on their
            // own data; undefined when the client lacks a group.
            let local_dpd = if cfg.algorithm == Algorithm::FairFed {
                let pred = w.predict_dataset(ds)?;
                dpd(&pred, ds.sensitive_attrs()).ok()
            } else {
                None
            };
            let (params, dual) = local::local_train(&w, &dual, ds, cfg, rates, streams)?;
            Ok((ClientUpdate { params, dual }, local_dpd))
        };
        let results = clients
            .par_iter()
            .enumerate()
            .map(step)
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.in_round(t))?;
        let (updates, dpds): (Vec<ClientUpdate>, Vec<Option<f64>>) = results.into_iter().unzip();

        if cfg.algorithm == Algorithm::FairFed {
            let reported: Vec<(f64, f64)> = dpds.iter().zip(&p).filter_map(|(d, w)| d.map(|d| (d, *w))).collect();
            let mass: f64 = reported.iter().map(|(_, w)| w).sum();
            let mean = if mass > 0.0 {
                reported.iter().map(|(d, w)| d * w).sum::<f64>() / mass
            } else {
                0.0
            };
            let filled: Vec<f64> = dpds.iter().map(|d| d.unwrap_or(mean)).collect();
            p = fairfed_reweight(&p, &filled, cfg.fairfed_beta).map_err(|e| e.in_round(t))?;
        }
        let (nw, nd) = aggregate(&updates, &p).map_err(|e| e.in_round(t))?;
        w = nw;
        dual = nd;
        records.push(evaluate(t, &w, &dual, rates).map_err(|e| e.in_round(t))?);
    }
    Ok(MetricsLog {
        algorithm: cfg.algorithm,
        seed: cfg.seed,
        records,
        final_params: w,
        final_dual: dual,
        final_coefficients: p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::{dirichlet_partition, generate_biased, SynthConfig};

    fn setup(n_clients: usize) -> (LabeledDataset, LabeledDataset, PartitionPlan) {
        let cfg = SynthConfig {
            n_samples: 600,
            dim: 3,
            ..SynthConfig::default()
        };
        let train = generate_biased(&cfg, 1).unwrap();
        let eval = generate_biased(&SynthConfig { n_samples: 300, ..cfg }, 2).unwrap();
        let plan = dirichlet_partition(&train, n_clients, 1.0, 3).unwrap();
        (train, eval, plan)
    }

    fn small(alg: Algorithm, n_clients: usize) -> FederationConfig {
        FederationConfig {
            algorithm: alg,
            n_clients,
            rounds: 5,
            local_steps: 2,
            batch_size: 32,
            seed: 7,
            ..FederationConfig::default()
        }
    }

    #[test]
    fn zero_rounds_logs_initial_model_only() {
        let (train, eval, plan) = setup(4);
        let log = run_training(
            &FederationConfig {
                rounds: 0,
                ..small(Algorithm::Ffalm, 4)
            },
            &plan,
            &train,
            &eval,
        )
        .unwrap();
        assert_eq!(log.records.len(), 1);
        assert_eq!(log.records[0].round, 0);
        assert!((log.records[0].train_loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn runs_are_reproducible() {
        let (train, eval, plan) = setup(4);
        for alg in Algorithm::ALL {
            let a = run_training(&small(alg, 4), &plan, &train, &eval).unwrap();
            let b = run_training(&small(alg, 4), &plan, &train, &eval).unwrap();
            assert_eq!(a, b, "{alg}");
            assert_eq!(a.records.len(), 6);
        }
    }

    #[test]
    fn multiplier_is_weighted_mean_of_client_multipliers() {
        let (train, eval, plan) = setup(4);
        let cfg = small(Algorithm::Ffalm, 4);
        let clients: Vec<_> = plan.clients.iter().map(|c| train.subset(c).unwrap()).collect();
        let mut w = ModelParams::init(cfg.model.architecture(3), cfg.seed);
        let mut lambda = 0.0;
        let log = run_training(&cfg, &plan, &train, &eval).unwrap();
        for t in 1..=cfg.rounds {
            let rates = cfg.round_rates(t);
            let mut ws = Vec::new();
            let mut ls = Vec::new();
            for (i, ds) in clients.iter().enumerate() {
                let s = ClientStreams {
                    seed: cfg.seed,
                    round: t,
                    client: i,
                };
                let (wi, li) = local_train_ffalm(&w, lambda, ds, &cfg, rates, s).unwrap();
                ws.push(wi);
                ls.push(li);
            }
            let direct: f64 = ls.iter().zip(&plan.coefficients).map(|(l, p)| l * p).sum();
            let updates: Vec<_> = ws
                .into_iter()
                .zip(&ls)
                .map(|(params, l)| ClientUpdate {
                    params,
                    dual: DualState::Scalar(*l),
                })
                .collect();
            let (nw, nd) = aggregate(&updates, &plan.coefficients).unwrap();
            w = nw;
            lambda = nd.summary();
            assert!((log.records[t].lambda - direct).abs() < 1e-12);
            assert_eq!(log.records[t].lambda, lambda);
        }
        assert_eq!(log.final_params, w);
    }

    #[test]
    fn single_client_federation_is_local_training() {
        let (train, eval, _) = setup(1);
        let plan = PartitionPlan::from_clients(vec![(0..train.len()).collect()]).unwrap();
        let cfg = small(Algorithm::FedAvg, 1);
        let log = run_training(&cfg, &plan, &train, &eval).unwrap();
        let mut w = ModelParams::init(cfg.model.architecture(3), cfg.seed);
        for t in 1..=cfg.rounds {
            let s = ClientStreams {
                seed: cfg.seed,
                round: t,
                client: 0,
            };
            w = local_train_fedavg(&w, &train, &cfg, cfg.round_rates(t).0, s).unwrap();
        }
        assert_eq!(log.final_params, w);
    }

    #[test]
    fn fpfl_duals_never_negative_and_fairfed_weights_sum_to_one() {
        let (train, eval, plan) = setup(5);
        let log = run_training(&small(Algorithm::Fpfl, 5), &plan, &train, &eval).unwrap();
        assert!(log.records.iter().all(|r| r.lambda >= 0.0));
        match log.final_dual {
            DualState::Pair([a, b]) => assert!(a >= 0.0 && b >= 0.0),
            other => panic!("{other:?}"),
        }
        let log = run_training(&small(Algorithm::FairFed, 5), &plan, &train, &eval).unwrap();
        let s: f64 = log.final_coefficients.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_inconsistent_inputs() {
        let (train, eval, plan) = setup(4);
        assert!(run_training(&small(Algorithm::FedAvg, 3), &plan, &train, &eval).is_err());
        let bad = FederationConfig {
            clip_norm: 0.0,
            ..small(Algorithm::FedAvg, 4)
        };
        assert!(run_training(&bad, &plan, &train, &eval).is_err());
        assert!("sgd".parse::<Algorithm>().is_err());
        assert_eq!("fairfed".parse::<Algorithm>().unwrap(), Algorithm::FairFed);
    }
}
