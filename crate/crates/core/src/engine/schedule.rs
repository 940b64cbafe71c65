use super::{FederationConfig, SchedulerMode};

/// Primal and dual learning rates for round `t >= 1`.
///
/// Empirical mode decays the primal rate by `lr_decay_factor` every
/// `lr_decay_step` rounds and grows the dual rate by `dual_growth` per round.
/// Theory mode uses `c_w / t` and `c_lambda / t^(2/3)`.
pub fn scheduler_step(cfg: &FederationConfig, t: usize) -> (f64, f64) {
    let t = t.max(1);
    match cfg.scheduler {
        SchedulerMode::Empirical => {
            let decays = ((t - 1) / cfg.lr_decay_step.max(1)) as i32;
            let eta_w = cfg.eta_w0 * cfg.lr_decay_factor.powi(decays);
            let eta_lambda = cfg.eta_lambda0 * cfg.dual_growth.powi((t - 1) as i32);
            (eta_w, eta_lambda)
        }
        SchedulerMode::Theory => {
            let t = t as f64;
            (cfg.theory_c_w / t, cfg.theory_c_lambda / t.powf(2.0 / 3.0))
        }
    }
}
