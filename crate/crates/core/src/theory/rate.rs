use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::testbed::{primal_risk, solve_primal_star, TestbedProblem};
use crate::engine::{scheduler_step, weighted_sum, FederationConfig, SchedulerMode};
use crate::error::{Error, Result};
use crate::rng;

/// Standard deviations of the Gaussian noise added to exact testbed
/// gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub sigma_w: f64,
    pub sigma_lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateExperiment {
    pub noise: NoiseModel,
    pub repetitions: usize,
    pub w0: f64,
    pub lambda0: f64,
    /// Rounds after which the gap is recorded, strictly increasing.
    pub checkpoints: Vec<usize>,
}

impl Default for RateExperiment {
    fn default() -> Self {
        RateExperiment {
            noise: NoiseModel {
                sigma_w: 2.0,
                sigma_lambda: 4.5,
            },
            repetitions: 20,
            w0: 2.0,
            lambda0: 0.0,
            checkpoints: vec![100, 200, 500, 1000, 2000, 5000],
        }
    }
}

impl RateExperiment {
    /// Theory-mode configuration the rate check runs with.
    pub fn default_config() -> FederationConfig {
        FederationConfig {
            n_clients: 4,
            local_steps: 50,
            scheduler: SchedulerMode::Theory,
            theory_c_w: 0.2,
            theory_c_lambda: 2.0,
            ..FederationConfig::default()
        }
    }
}

/// Mean and spread of `R_S(w_t) - R_S*` across repetitions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapPoint {
    pub t: usize,
    pub mean: f64,
    pub std: f64,
    pub repetitions: usize,
}

fn run_once(problem: &TestbedProblem, cfg: &FederationConfig, exp: &RateExperiment, r_star: f64, rep: u64) -> Vec<f64> {
    let mut noise = rng::stream(cfg.seed, &[rng::purpose::NOISE, rep]);
    let n = problem.n_clients();
    let last = *exp.checkpoints.last().expect("checked non-empty");
    let (mut w, mut lambda) = (exp.w0, exp.lambda0);
    let mut gaps = Vec::with_capacity(exp.checkpoints.len());
    let mut next = 0;
    let mut client_w = vec![0.0; n];
    let mut client_l = vec![0.0; n];
    for t in 1..=last {
        let (eta_w, eta_l) = scheduler_step(cfg, t);
        for i in 0..n {
            let mut wi = w;
            for _ in 0..cfg.local_steps {
                let xi: f64 = noise.sample(StandardNormal);
                wi -= eta_w * (problem.grad_w(i, wi, lambda) + exp.noise.sigma_w * xi);
            }
            let xi: f64 = noise.sample(StandardNormal);
            client_l[i] = lambda + eta_l * (problem.grad_lambda(i, wi, lambda) + exp.noise.sigma_lambda * xi);
            client_w[i] = wi;
        }
        w = weighted_sum(&client_w, &problem.coefficients);
        lambda = weighted_sum(&client_l, &problem.coefficients);
        if t == exp.checkpoints[next] {
            gaps.push(primal_risk(problem, w) - r_star);
            next += 1;
        }
    }
    gaps
}

/// Run the federated primal-dual loop on the testbed with theory-mode
/// schedules, `repetitions` times with independent noise, and average the
/// optimality gap at each checkpoint.
pub fn run_rate_experiment(
    problem: &TestbedProblem,
    cfg: &FederationConfig,
    exp: &RateExperiment,
) -> Result<Vec<GapPoint>> {
    if cfg.scheduler != SchedulerMode::Theory {
        return Err(Error::invalid("rate experiments need the theory scheduler"));
    }
    if !(cfg.theory_c_w > 0.0) || !(cfg.theory_c_lambda > 0.0) || cfg.local_steps == 0 {
        return Err(Error::invalid("theory rates and local steps must be positive"));
    }
    if exp.repetitions == 0 {
        return Err(Error::invalid("at least one repetition is required"));
    }
    if exp.checkpoints.is_empty() || exp.checkpoints[0] == 0 || exp.checkpoints.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::invalid("checkpoints must be positive and strictly increasing"));
    }
    let NoiseModel { sigma_w, sigma_lambda } = exp.noise;
    if !(sigma_w >= 0.0) || !(sigma_lambda >= 0.0) || !exp.w0.is_finite() || !exp.lambda0.is_finite() {
        return Err(Error::invalid("noise levels must be non-negative and the start finite"));
    }
    let (_, r_star) = solve_primal_star(problem);
    let runs: Vec<Vec<f64>> = (0..exp.repetitions as u64)
        .into_par_iter()
        .map(|rep| run_once(problem, cfg, exp, r_star, rep))
        .collect();
    let reps = exp.repetitions as f64;
    Ok(exp
        .checkpoints
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let mean = runs.iter().map(|r| r[k]).sum::<f64>() / reps;
            let std = if exp.repetitions > 1 {
                (runs.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / (reps - 1.0)).sqrt()
            } else {
                0.0
            };
            GapPoint {
                t,
                mean,
                std,
                repetitions: exp.repetitions,
            }
        })
        .collect())
}

/// Least-squares slope of `ln gap` against `ln t`.
pub fn fit_rate(points: &[(usize, f64)]) -> Result<f64> {
    if points.len() < 4 {
        return Err(Error::invalid(format!(
            "need at least 4 checkpoints, got {}",
            points.len()
        )));
    }
    if let Some(&(t, gap)) = points.iter().find(|(_, g)| !(*g > 0.0)) {
        return Err(Error::BelowMeasurementFloor { t, gap });
    }
    let xs: Vec<f64> = points.iter().map(|(t, _)| (*t as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, g)| g.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("checkpoints must be distinct"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Write `t,gap_mean,gap_std,repetitions`.
pub fn write_gap_csv(path: &Path, points: &[GapPoint]) -> Result<()> {
    let mut out = String::from("t,gap_mean,gap_std,repetitions\n");
    for p in points {
        out.push_str(&format!("{},{},{},{}\n", p.t, p.mean, p.std, p.repetitions));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
