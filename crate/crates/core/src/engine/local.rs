//! Client-side training for each algorithm.

use super::{DualState, FederationConfig};
use crate::data::{sample_batch, Batch, LabeledDataset};
use crate::error::{Error, Result};
use crate::fairness::surrogate_gap;
use crate::model::{
    clip_gradient, grad_augmented, group_loss_grads, sgd_step, GradVector, ModelParams, SingleGroupPolicy,
};
use crate::rng;

/// Addresses the batch streams of one client in one round.
#[derive(Debug, Clone, Copy)]
pub struct ClientStreams {
    pub seed: u64,
    pub round: usize,
    pub client: usize,
}

impl ClientStreams {
    fn batch(&self, ds: &LabeledDataset, batch_size: usize, step: usize) -> Result<Batch> {
        let mut r = rng::stream(
            self.seed,
            &[rng::purpose::BATCH, self.round as u64, self.client as u64, step as u64],
        );
        sample_batch(ds, batch_size, &mut r)
    }
}

/// `E` steps of clipped SGD from `start`, using `grad` on fresh batches.
fn local_sgd<F>(
    start: &ModelParams,
    ds: &LabeledDataset,
    cfg: &FederationConfig,
    eta_w: f64,
    streams: ClientStreams,
    mut grad: F,
) -> Result<ModelParams>
where
    F: FnMut(&ModelParams, &Batch) -> Result<GradVector>,
{
    let mut w = start.clone();
    for step in 0..cfg.local_steps {
        let batch = streams.batch(ds, cfg.batch_size, step)?;
        let g = clip_gradient(grad(&w, &batch)?, cfg.clip_norm)?;
        w = sgd_step(&w, &g, eta_w)?;
    }
    Ok(w)
}

/// `lambda + eta_lambda * delta_mu`.
pub fn dual_update(lambda: f64, eta_lambda: f64, delta_mu: f64) -> Result<f64> {
    if !lambda.is_finite() || !eta_lambda.is_finite() || !delta_mu.is_finite() {
        return Err(Error::invalid("dual update with non-finite input"));
    }
    if eta_lambda < 0.0 {
        return Err(Error::invalid(format!(
            "dual learning rate must be non-negative, got {eta_lambda}"
        )));
    }
    Ok(lambda + eta_lambda * delta_mu)
}

/// Signed group-loss gap on the full client dataset, or zero when one group
/// is absent and the policy is lenient.
fn client_gap(w: &ModelParams, ds: &LabeledDataset, cfg: &FederationConfig) -> Result<f64> {
    match surrogate_gap(w, ds, cfg.loss.ce) {
        Ok(g) => Ok(g.delta_mu),
        Err(Error::UndefinedMetric(_)) if cfg.loss.single_group == SingleGroupPolicy::Lenient => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// Plain task-loss gradient on a batch.
fn task_grad(w: &ModelParams, ds: &LabeledDataset, batch: &Batch, cfg: &FederationConfig) -> Result<GradVector> {
    Ok(GradVector(
        group_loss_grads(w, ds, &batch.indices, cfg.loss.ce)?.mean_grad(),
    ))
}

pub fn local_train_fedavg(
    w_global: &ModelParams,
    ds: &LabeledDataset,
    cfg: &FederationConfig,
    eta_w: f64,
    streams: ClientStreams,
) -> Result<ModelParams> {
    local_sgd(w_global, ds, cfg, eta_w, streams, |w, b| task_grad(w, ds, b, cfg))
}

/// Augmented-Lagrangian local training: `E` clipped SGD steps with the
/// multiplier held at `lambda_global`, then one dual ascent step using the
/// group-loss gap of the trained local model on the whole client dataset.
pub fn local_train_ffalm(
    w_global: &ModelParams,
    lambda_global: f64,
    ds: &LabeledDataset,
    cfg: &FederationConfig,
    (eta_w, eta_lambda): (f64, f64),
    streams: ClientStreams,
) -> Result<(ModelParams, f64)> {
    let beta = cfg.penalty_beta;
    let w = local_sgd(w_global, ds, cfg, eta_w, streams, |w, b| {
        grad_augmented(w, lambda_global, beta, ds, b, &cfg.loss)
    })?;
    let gap = client_gap(&w, ds, cfg)?;
    let lambda = dual_update(lambda_global, eta_lambda, gap)?;
    Ok((w, lambda))
}

/// Hinged group-loss excesses `[L - mu_g]_+` from a loss/gradient pass.
fn hinge_terms(stats: &crate::model::GroupLossGrads) -> [f64; 2] {
    let overall = stats.mean_loss();
    let mut out = [0.0; 2];
    for (g, o) in out.iter_mut().enumerate() {
        if stats.count[g] > 0 {
            *o = (overall - stats.group_mean_loss(g)).max(0.0);
        }
    }
    out
}

/// Gradient of `L + sum_g lambda_g d_g + beta/2 sum_g d_g^2` with
/// `d_g = [L - mu_g]_+`; the hinge subgradient at zero is taken as zero.
pub fn grad_fpfl(
    w: &ModelParams,
    duals: [f64; 2],
    beta: f64,
    ds: &LabeledDataset,
    batch: &Batch,
    cfg: &FederationConfig,
) -> Result<GradVector> {
    let stats = group_loss_grads(w, ds, &batch.indices, cfg.loss.ce)?;
    if !stats.has_both_groups() && cfg.loss.single_group == SingleGroupPolicy::Strict {
        return Err(Error::SingleGroupBatch(format!(
            "{} samples of group 0, {} of group 1",
            stats.count[0], stats.count[1]
        )));
    }
    let mut grad = stats.mean_grad();
    let hinge = hinge_terms(&stats);
    let base = grad.clone();
    for g in 0..2 {
        let coeff = duals[g] + beta * hinge[g];
        if hinge[g] > 0.0 && coeff != 0.0 {
            let n = stats.count[g] as f64;
            for ((o, b), s) in grad.iter_mut().zip(&base).zip(&stats.grad_sum[g]) {
                *o += coeff * (b - s / n);
            }
        }
    }
    Ok(GradVector(grad))
}

/// FPFL local training: clipped SGD on the hinged penalty objective, then
/// projected dual ascent `lambda_g <- [lambda_g + eta * d_g]_+` using the
/// excesses on the whole client dataset.
pub fn local_train_fpfl(
    w_global: &ModelParams,
    duals: [f64; 2],
    ds: &LabeledDataset,
    cfg: &FederationConfig,
    eta_w: f64,
    streams: ClientStreams,
) -> Result<(ModelParams, [f64; 2])> {
    let w = local_sgd(w_global, ds, cfg, eta_w, streams, |w, b| {
        grad_fpfl(w, duals, cfg.fpfl_beta, ds, b, cfg)
    })?;
    let stats = group_loss_grads(&w, ds, &Batch::full(ds).indices, cfg.loss.ce)?;
    let hinge = hinge_terms(&stats);
    let eta = cfg.fpfl_eta_lambda;
    Ok((
        w,
        [
            (duals[0] + eta * hinge[0]).max(0.0),
            (duals[1] + eta * hinge[1]).max(0.0),
        ],
    ))
}

/// Run the local step matching the configured algorithm.
pub(crate) fn local_train(
    w_global: &ModelParams,
    dual: &DualState,
    ds: &LabeledDataset,
    cfg: &FederationConfig,
    rates: (f64, f64),
    streams: ClientStreams,
) -> Result<(ModelParams, DualState)> {
    use super::Algorithm::*;
    match (cfg.algorithm, dual) {
        (FedAvg | FairFed, _) => Ok((
            local_train_fedavg(w_global, ds, cfg, rates.0, streams)?,
            DualState::None,
        )),
        (Ffalm, DualState::Scalar(l)) => {
            let (w, l) = local_train_ffalm(w_global, *l, ds, cfg, rates, streams)?;
            Ok((w, DualState::Scalar(l)))
        }
        (Fpfl, DualState::Pair(d)) => {
            let (w, d) = local_train_fpfl(w_global, *d, ds, cfg, rates.0, streams)?;
            Ok((w, DualState::Pair(d)))
        }
        (alg, dual) => Err(Error::invalid(format!("{alg} cannot use dual state {dual:?}"))),
    }
}
