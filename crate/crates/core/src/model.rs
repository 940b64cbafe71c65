//! Two-logit binary classifiers with hand-derived gradients.
//!
//! Parameters are a flat vector. Each layer is stored row by row as
//! `[weights..., bias]`:
//!
//! * linear: two rows of `dim + 1` values, one per logit;
//! * mlp: `hidden` tanh rows of `dim + 1` values, then two output rows of
//!   `hidden + 1` values.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::data::{Batch, LabeledDataset};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Linear { dim: usize },
    Mlp { dim: usize, hidden: usize },
}

impl Architecture {
    pub fn input_dim(&self) -> usize {
        match *self {
            Architecture::Linear { dim } | Architecture::Mlp { dim, .. } => dim,
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            Architecture::Linear { dim } => 2 * (dim + 1),
            Architecture::Mlp { dim, hidden } => hidden * (dim + 1) + 2 * (hidden + 1),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Architecture::Linear { dim } => write!(f, "linear dim={dim}"),
            Architecture::Mlp { dim, hidden } => write!(f, "mlp dim={dim} hidden={hidden}"),
        }
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split_whitespace();
        let kind = parts.next().unwrap_or_default();
        let mut dim = None;
        let mut hidden = None;
        for part in parts {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("malformed architecture field '{part}'")))?;
            let value: usize = value
                .parse()
                .map_err(|_| Error::invalid(format!("malformed architecture field '{part}'")))?;
            match key {
                "dim" => dim = Some(value),
                "hidden" => hidden = Some(value),
                _ => return Err(Error::invalid(format!("unknown architecture field '{key}'"))),
            }
        }
        let dim = dim.ok_or_else(|| Error::invalid("architecture is missing dim"))?;
        match (kind, hidden) {
            ("linear", None) => Ok(Architecture::Linear { dim }),
            ("mlp", Some(hidden)) if hidden > 0 => Ok(Architecture::Mlp { dim, hidden }),
            _ => Err(Error::invalid(format!("invalid architecture descriptor '{s}'"))),
        }
    }
}

/// Which cross-entropy the objective uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CeMode {
    /// `-log sigmoid(q_y)`: only the true-class logit enters the loss.
    #[default]
    Sigmoid,
    /// `-log softmax(q)_y`.
    Softmax,
}

/// What to do when a batch lacks one of the sensitive groups, which leaves
/// the group-loss gap undefined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SingleGroupPolicy {
    /// Drop the fairness terms for that step and log a warning.
    #[default]
    Lenient,
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LossConfig {
    pub ce: CeMode,
    pub single_group: SingleGroupPolicy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: Architecture,
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradVector(pub Vec<f64>);

impl GradVector {
    pub fn zeros(len: usize) -> Self {
        GradVector(vec![0.0; len])
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Per-sample cross-entropy of the true class `y`.
pub fn sample_ce(logits: [f64; 2], y: u8, mode: CeMode) -> f64 {
    let qy = logits[y as usize];
    match mode {
        CeMode::Sigmoid => softplus(-qy),
        CeMode::Softmax => softplus(logits[1 - y as usize] - qy),
    }
}

/// Derivative of [`sample_ce`] with respect to both logits.
pub fn sample_ce_logit_grad(logits: [f64; 2], y: u8, mode: CeMode) -> [f64; 2] {
    let y = y as usize;
    let mut out = [0.0; 2];
    match mode {
        CeMode::Sigmoid => {
            out[y] = sigmoid(logits[y]) - 1.0;
        }
        CeMode::Softmax => {
            let p_true = sigmoid(logits[y] - logits[1 - y]);
            out[y] = p_true - 1.0;
            out[1 - y] = 1.0 - p_true;
        }
    }
    out
}

impl ModelParams {
    pub fn zeros(arch: Architecture) -> Self {
        ModelParams {
            arch,
            values: vec![0.0; arch.param_count()],
        }
    }

    /// Zero weights for the linear model; for the MLP, every weight and bias
    /// is uniform in `±1/sqrt(fan_in)` of its layer.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        match arch {
            Architecture::Linear { .. } => Self::zeros(arch),
            Architecture::Mlp { dim, hidden } => {
                let mut r = rng::stream(seed, &[rng::purpose::INIT]);
                let bound_in = 1.0 / (dim as f64).sqrt();
                let bound_out = 1.0 / (hidden as f64).sqrt();
                let mut values = Vec::with_capacity(arch.param_count());
                for _ in 0..hidden * (dim + 1) {
                    values.push(r.random_range(-bound_in..=bound_in));
                }
                for _ in 0..2 * (hidden + 1) {
                    values.push(r.random_range(-bound_out..=bound_out));
                }
                ModelParams { arch, values }
            }
        }
    }

    pub fn from_values(arch: Architecture, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.param_count() {
            return Err(Error::DimensionMismatch {
                expected: arch.param_count(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("model parameters must be finite"));
        }
        Ok(ModelParams { arch, values })
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.arch.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn predict_logits(&self, x: &[f64]) -> Result<[f64; 2]> {
        self.check_input(x)?;
        Ok(self.logits_unchecked(x, &mut Vec::new()))
    }

    /// Argmax of the logits; ties go to label 0.
    pub fn predict_label(&self, x: &[f64]) -> Result<u8> {
        let q = self.predict_logits(x)?;
        Ok(u8::from(q[1] > q[0]))
    }

    pub fn predict_dataset(&self, ds: &LabeledDataset) -> Result<Vec<u8>> {
        self.check_input(ds.row(0))?;
        let mut hidden = Vec::new();
        Ok((0..ds.len())
            .map(|i| {
                let q = self.logits_unchecked(ds.row(i), &mut hidden);
                u8::from(q[1] > q[0])
            })
            .collect())
    }

    /// Forward pass. For the MLP the hidden activations are left in `hidden`.
    fn logits_unchecked(&self, x: &[f64], hidden: &mut Vec<f64>) -> [f64; 2] {
        let w = &self.values;
        match self.arch {
            Architecture::Linear { dim } => {
                let mut q = [0.0; 2];
                for (k, qk) in q.iter_mut().enumerate() {
                    let row = &w[k * (dim + 1)..(k + 1) * (dim + 1)];
                    *qk = dot(&row[..dim], x) + row[dim];
                }
                q
            }
            Architecture::Mlp { dim, hidden: h } => {
                hidden.clear();
                for j in 0..h {
                    let row = &w[j * (dim + 1)..(j + 1) * (dim + 1)];
                    hidden.push((dot(&row[..dim], x) + row[dim]).tanh());
                }
                let base = h * (dim + 1);
                let mut q = [0.0; 2];
                for (k, qk) in q.iter_mut().enumerate() {
                    let row = &w[base + k * (h + 1)..base + (k + 1) * (h + 1)];
                    *qk = dot(&row[..h], hidden) + row[h];
                }
                q
            }
        }
    }

    /// Add `d(logits)/d(params)^T * dq` into `out`, given the hidden
    /// activations of the forward pass at `x`.
    fn backprop(&self, x: &[f64], hidden: &[f64], dq: [f64; 2], out: &mut [f64]) {
        let w = &self.values;
        match self.arch {
            Architecture::Linear { dim } => {
                for (k, &g) in dq.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    let row = &mut out[k * (dim + 1)..(k + 1) * (dim + 1)];
                    for (o, &xi) in row[..dim].iter_mut().zip(x) {
                        *o += g * xi;
                    }
                    row[dim] += g;
                }
            }
            Architecture::Mlp { dim, hidden: h } => {
                let base = h * (dim + 1);
                for (k, &g) in dq.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    let row = &mut out[base + k * (h + 1)..base + (k + 1) * (h + 1)];
                    for (o, &hj) in row[..h].iter_mut().zip(hidden) {
                        *o += g * hj;
                    }
                    row[h] += g;
                }
                for (j, &hj) in hidden.iter().enumerate() {
                    let dh: f64 = dq.iter().enumerate().map(|(k, &g)| g * w[base + k * (h + 1) + j]).sum();
                    let da = dh * (1.0 - hj * hj);
                    if da == 0.0 {
                        continue;
                    }
                    let row = &mut out[j * (dim + 1)..(j + 1) * (dim + 1)];
                    for (o, &xi) in row[..dim].iter_mut().zip(x) {
                        *o += da * xi;
                    }
                    row[dim] += da;
                }
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Summed cross-entropy and its gradient, split by sensitive group.
#[derive(Debug, Clone)]
pub struct GroupLossGrads {
    pub count: [usize; 2],
    pub loss_sum: [f64; 2],
    pub grad_sum: [Vec<f64>; 2],
}

impl GroupLossGrads {
    pub fn total_count(&self) -> usize {
        self.count[0] + self.count[1]
    }

    pub fn has_both_groups(&self) -> bool {
        self.count[0] > 0 && self.count[1] > 0
    }

    /// Mean loss over both groups.
    pub fn mean_loss(&self) -> f64 {
        (self.loss_sum[0] + self.loss_sum[1]) / self.total_count() as f64
    }

    pub fn mean_grad(&self) -> Vec<f64> {
        let n = self.total_count() as f64;
        self.grad_sum[0]
            .iter()
            .zip(&self.grad_sum[1])
            .map(|(a, b)| (a + b) / n)
            .collect()
    }

    /// Mean loss of group `g`.
    pub fn group_mean_loss(&self, g: usize) -> f64 {
        self.loss_sum[g] / self.count[g] as f64
    }

    pub fn group_mean_grad(&self, g: usize) -> Vec<f64> {
        let n = self.count[g] as f64;
        self.grad_sum[g].iter().map(|v| v / n).collect()
    }
}

/// One pass over `indices` accumulating per-group loss and gradient sums.
pub fn group_loss_grads(
    params: &ModelParams,
    ds: &LabeledDataset,
    indices: &[usize],
    ce: CeMode,
) -> Result<GroupLossGrads> {
    if indices.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    params.check_input(ds.row(0))?;
    let dim = params.len();
    let mut out = GroupLossGrads {
        count: [0; 2],
        loss_sum: [0.0; 2],
        grad_sum: [vec![0.0; dim], vec![0.0; dim]],
    };
    let mut hidden = Vec::new();
    for &i in indices {
        let x = ds.row(i);
        let y = ds.label(i);
        let g = ds.sensitive(i) as usize;
        let q = params.logits_unchecked(x, &mut hidden);
        out.count[g] += 1;
        out.loss_sum[g] += sample_ce(q, y, ce);
        params.backprop(x, &hidden, sample_ce_logit_grad(q, y, ce), &mut out.grad_sum[g]);
    }
    Ok(out)
}

/// Mean cross-entropy over the batch, without group conditioning.
pub fn task_loss(params: &ModelParams, ds: &LabeledDataset, batch: &Batch, ce: CeMode) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    params.check_input(ds.row(0))?;
    let mut hidden = Vec::new();
    let sum: f64 = batch
        .indices
        .iter()
        .map(|&i| sample_ce(params.logits_unchecked(ds.row(i), &mut hidden), ds.label(i), ce))
        .sum();
    Ok(sum / batch.len() as f64)
}

/// `L_S + lambda * gap + beta/2 * gap^2` on the batch, with `gap` the
/// group-0 minus group-1 mean loss. Errors if the batch lacks a group.
pub fn augmented_objective(
    params: &ModelParams,
    lambda: f64,
    beta: f64,
    ds: &LabeledDataset,
    batch: &Batch,
    ce: CeMode,
) -> Result<f64> {
    let stats = group_loss_grads(params, ds, &batch.indices, ce)?;
    if !stats.has_both_groups() {
        return Err(Error::SingleGroupBatch(format!(
            "{} samples of group 0, {} of group 1",
            stats.count[0], stats.count[1]
        )));
    }
    let gap = stats.group_mean_loss(0) - stats.group_mean_loss(1);
    Ok(stats.mean_loss() + lambda * gap + 0.5 * beta * gap * gap)
}

/// Gradient of `L_S + lambda * gap + beta/2 * gap^2` on the batch, where
/// `gap` is the signed difference of the group mean losses (group 0 minus
/// group 1): `grad L_S + (lambda + beta * gap) * grad gap`.
pub fn grad_augmented(
    params: &ModelParams,
    lambda: f64,
    beta: f64,
    ds: &LabeledDataset,
    batch: &Batch,
    loss: &LossConfig,
) -> Result<GradVector> {
    let stats = group_loss_grads(params, ds, &batch.indices, loss.ce)?;
    let mut grad = stats.mean_grad();
    if !stats.has_both_groups() {
        match loss.single_group {
            SingleGroupPolicy::Strict => {
                return Err(Error::SingleGroupBatch(format!(
                    "{} samples of group 0, {} of group 1",
                    stats.count[0], stats.count[1]
                )))
            }
            SingleGroupPolicy::Lenient => {
                if lambda != 0.0 || beta != 0.0 {
                    log::warn!(
                        "single-group batch ({} / {}); fairness terms skipped",
                        stats.count[0],
                        stats.count[1]
                    );
                }
                return Ok(GradVector(grad));
            }
        }
    }
    let gap = stats.group_mean_loss(0) - stats.group_mean_loss(1);
    let coeff = lambda + beta * gap;
    if coeff != 0.0 {
        let (n0, n1) = (stats.count[0] as f64, stats.count[1] as f64);
        for ((g, a), b) in grad.iter_mut().zip(&stats.grad_sum[0]).zip(&stats.grad_sum[1]) {
            *g += coeff * (a / n0 - b / n1);
        }
    }
    Ok(GradVector(grad))
}

/// Rescale `g` onto the `max_norm` ball if it lies outside.
pub fn clip_gradient(g: GradVector, max_norm: f64) -> Result<GradVector> {
    if !(max_norm > 0.0) {
        return Err(Error::invalid(format!("max_norm must be positive, got {max_norm}")));
    }
    let norm = g.norm();
    // A few ulps of slack keeps clip(clip(g)) == clip(g).
    if norm <= max_norm * (1.0 + 1e-12) {
        return Ok(g);
    }
    let scale = max_norm / norm;
    Ok(GradVector(g.0.into_iter().map(|v| v * scale).collect()))
}

pub fn sgd_step(params: &ModelParams, grad: &GradVector, lr: f64) -> Result<ModelParams> {
    if grad.len() != params.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            got: grad.len(),
        });
    }
    if !(lr >= 0.0) {
        return Err(Error::invalid(format!("learning rate must be non-negative, got {lr}")));
    }
    let values = params.values.iter().zip(&grad.0).map(|(w, g)| w - lr * g).collect();
    Ok(ModelParams {
        arch: params.arch,
        values,
    })
}
