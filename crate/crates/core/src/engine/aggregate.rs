use super::DualState;
use crate::error::{Error, Result};
use crate::model::ModelParams;

const COEFF_TOLERANCE: f64 = 1e-9;

/// What a client sends back after local training.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub params: ModelParams,
    pub dual: DualState,
}

fn format_sum(sum: f64) -> String {
    let s = format!("{sum:.10}");
    let s = s.trim_end_matches('0');
    s.trim_end_matches('.').to_string()
}

pub(crate) fn check_coefficients(p: &[f64]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > COEFF_TOLERANCE || p.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::CoefficientSum(format_sum(sum)));
    }
    Ok(())
}

/// `sum_i p_i x_i`, reduced in ascending client order.
pub fn weighted_sum(values: &[f64], p: &[f64]) -> f64 {
    let mut acc = p[0] * values[0];
    for (v, w) in values.iter().zip(p).skip(1) {
        acc += w * v;
    }
    acc
}

fn aggregate_duals(duals: &[&DualState], p: &[f64]) -> Result<DualState> {
    match duals[0] {
        DualState::None => {
            if duals.iter().all(|d| matches!(d, DualState::None)) {
                Ok(DualState::None)
            } else {
                Err(Error::invalid("mixed dual state kinds"))
            }
        }
        DualState::Scalar(_) => {
            let values = duals
                .iter()
                .map(|d| match d {
                    DualState::Scalar(v) => Ok(*v),
                    _ => Err(Error::invalid("mixed dual state kinds")),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(DualState::Scalar(weighted_sum(&values, p)))
        }
        DualState::Pair(_) => {
            let pairs = duals
                .iter()
                .map(|d| match d {
                    DualState::Pair(v) => Ok(*v),
                    _ => Err(Error::invalid("mixed dual state kinds")),
                })
                .collect::<Result<Vec<_>>>()?;
            let first: Vec<f64> = pairs.iter().map(|v| v[0]).collect();
            let second: Vec<f64> = pairs.iter().map(|v| v[1]).collect();
            Ok(DualState::Pair([weighted_sum(&first, p), weighted_sum(&second, p)]))
        }
    }
}

/// Weighted average of client models and multipliers with coefficients `p`.
pub fn aggregate(updates: &[ClientUpdate], p: &[f64]) -> Result<(ModelParams, DualState)> {
    if updates.is_empty() || updates.len() != p.len() {
        return Err(Error::LengthMismatch(format!(
            "{} updates, {} coefficients",
            updates.len(),
            p.len()
        )));
    }
    check_coefficients(p)?;
    let arch = updates[0].params.arch();
    let dim = updates[0].params.len();
    for u in updates {
        if u.params.arch() != arch {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: u.params.len(),
            });
        }
    }
    let mut values: Vec<f64> = updates[0].params.values().iter().map(|v| p[0] * v).collect();
    for (u, w) in updates.iter().zip(p).skip(1) {
        for (acc, v) in values.iter_mut().zip(u.params.values()) {
            *acc += w * v;
        }
    }
    let duals: Vec<&DualState> = updates.iter().map(|u| &u.dual).collect();
    Ok((ModelParams::from_values(arch, values)?, aggregate_duals(&duals, p)?))
}

/// FairFed-style coefficient adjustment.
///
/// Each client's weight is reduced by `beta` times the distance of its local
/// DPD from the weighted mean DPD, floored at zero and renormalized. If every
/// weight vanishes the previous coefficients are kept.
pub fn fairfed_reweight(p_prev: &[f64], client_dpds: &[f64], beta: f64) -> Result<Vec<f64>> {
    if p_prev.len() != client_dpds.len() || p_prev.is_empty() {
        return Err(Error::LengthMismatch(format!(
            "{} coefficients, {} client metrics",
            p_prev.len(),
            client_dpds.len()
        )));
    }
    if client_dpds.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("client metrics must be finite"));
    }
    if beta == 0.0 || client_dpds.iter().all(|&d| d == client_dpds[0]) {
        return Ok(p_prev.to_vec());
    }
    let mean = weighted_sum(client_dpds, p_prev);
    let adjusted: Vec<f64> = p_prev
        .iter()
        .zip(client_dpds)
        .map(|(p, d)| (p - beta * (d - mean).abs()).max(0.0))
        .collect();
    let total: f64 = adjusted.iter().sum();
    if total <= 0.0 {
        return Ok(p_prev.to_vec());
    }
    Ok(adjusted.into_iter().map(|v| v / total).collect())
}
