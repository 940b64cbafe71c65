//! Randomized finite-difference check of the augmented-Lagrangian gradient.

use rand::Rng;

use crate::data::{Batch, LabeledDataset};
use crate::error::Result;
use crate::model::{augmented_objective, grad_augmented, Architecture, CeMode, LossConfig, ModelParams};
use crate::rng;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor so that near-zero components are compared absolutely.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub instances: usize,
    pub coordinates: usize,
    pub max_rel_error: f64,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

fn random_instance<R: Rng>(r: &mut R, k: usize) -> Result<(ModelParams, LabeledDataset, f64, f64, CeMode)> {
    let dim = r.random_range(1..=6);
    let arch = if k.is_multiple_of(2) {
        Architecture::Linear { dim }
    } else {
        Architecture::Mlp {
            dim,
            hidden: r.random_range(1..=6),
        }
    };
    let n = r.random_range(2..=24);
    let features: Vec<f64> = (0..n * dim).map(|_| r.random_range(-2.0..2.0)).collect();
    let labels = (0..n).map(|_| r.random_range(0..2u8)).collect();
    // First two rows cover both groups.
    let sensitive = (0..n)
        .map(|i| if i < 2 { i as u8 } else { r.random_range(0..2u8) })
        .collect();
    let ds = LabeledDataset::from_flat(features, dim, labels, sensitive)?;
    let values = (0..arch.param_count()).map(|_| r.random_range(-1.0..1.0)).collect();
    let params = ModelParams::from_values(arch, values)?;
    let ce = if (k / 2).is_multiple_of(2) {
        CeMode::Sigmoid
    } else {
        CeMode::Softmax
    };
    Ok((params, ds, r.random_range(-3.0..3.0), r.random_range(0.0..5.0), ce))
}

/// Compare analytic and central-difference gradients on `instances` random
/// (model, batch, lambda, beta) draws alternating between architectures.
pub fn run_gradcheck(instances: usize, seed: u64) -> Result<GradCheckReport> {
    let mut r = rng::stream(seed, &[rng::purpose::PROBE, 1]);
    let mut report = GradCheckReport {
        instances,
        coordinates: 0,
        max_rel_error: 0.0,
    };
    for k in 0..instances {
        let (params, ds, lambda, beta, ce) = random_instance(&mut r, k)?;
        let batch = Batch::full(&ds);
        let loss = LossConfig {
            ce,
            ..LossConfig::default()
        };
        let g = grad_augmented(&params, lambda, beta, &ds, &batch, &loss)?;
        for i in 0..params.len() {
            let mut plus = params.values().to_vec();
            let mut minus = plus.clone();
            plus[i] += FD_STEP;
            minus[i] -= FD_STEP;
            let fp = augmented_objective(
                &ModelParams::from_values(params.arch(), plus)?,
                lambda,
                beta,
                &ds,
                &batch,
                ce,
            )?;
            let fm = augmented_objective(
                &ModelParams::from_values(params.arch(), minus)?,
                lambda,
                beta,
                &ds,
                &batch,
                ce,
            )?;
            let fd = (fp - fm) / (2.0 * FD_STEP);
            report.max_rel_error = report.max_rel_error.max(relative_error(fd, g.0[i]));
            report.coordinates += 1;
        }
    }
    Ok(report)
}
