//! Synthetic biased data and Dirichlet label-skew partitioning.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng;

/// Generator settings for a dataset whose label rate depends on the
/// sensitive group.
///
/// Features are `noise_scale * N(0, I)` plus a class mean of
/// `±class_separation / 2` on axis 0 and a group mean of
/// `±group_shift / 2` on axis 1 (axis 0 when `dim == 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub dim: usize,
    /// P(S = 1).
    pub p_group1: f64,
    /// P(Y = 1 | S = 0).
    pub p_pos_s0: f64,
    /// P(Y = 1 | S = 1).
    pub p_pos_s1: f64,
    pub class_separation: f64,
    pub group_shift: f64,
    pub noise_scale: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_samples: 10_000,
            dim: 10,
            p_group1: 0.5,
            p_pos_s0: 0.7,
            p_pos_s1: 0.3,
            class_separation: 1.0,
            group_shift: 3.0,
            noise_scale: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_group1", self.p_group1),
            ("p_pos_s0", self.p_pos_s0),
            ("p_pos_s1", self.p_pos_s1),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.n_samples < 4 {
            return Err(Error::invalid("n_samples must be at least 4"));
        }
        if self.dim == 0 {
            return Err(Error::invalid("dim must be at least 1"));
        }
        for (name, v) in [
            ("class_separation", self.class_separation),
            ("group_shift", self.group_shift),
            ("noise_scale", self.noise_scale),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

pub fn generate_biased(cfg: &SynthConfig, seed: u64) -> Result<LabeledDataset> {
    cfg.validate()?;
    let mut r = rng::stream(seed, &[rng::purpose::DATA]);
    let group_axis = 1.min(cfg.dim - 1);
    let mut features = Vec::with_capacity(cfg.n_samples * cfg.dim);
    let mut labels = Vec::with_capacity(cfg.n_samples);
    let mut sensitive = Vec::with_capacity(cfg.n_samples);
    for _ in 0..cfg.n_samples {
        let s = u8::from(r.random_bool(cfg.p_group1));
        let p_pos = if s == 0 { cfg.p_pos_s0 } else { cfg.p_pos_s1 };
        let y = u8::from(r.random_bool(p_pos));
        let start = features.len();
        for _ in 0..cfg.dim {
            let z: f64 = StandardNormal.sample(&mut r);
            features.push(cfg.noise_scale * z);
        }
        let sign = |b: u8| if b == 1 { 0.5 } else { -0.5 };
        features[start] += sign(y) * cfg.class_separation;
        features[start + group_axis] += sign(s) * cfg.group_shift;
        labels.push(y);
        sensitive.push(s);
    }
    LabeledDataset::from_flat(features, cfg.dim, labels, sensitive)
}

/// Shuffle with `seed` and hold out `round(eval_fraction * n)` samples for
/// evaluation. Returns `(train, eval)`.
pub fn train_eval_split(
    ds: &LabeledDataset,
    eval_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "eval_fraction must lie in (0, 1), got {eval_fraction}"
        )));
    }
    let n_eval = (eval_fraction * ds.len() as f64).round() as usize;
    if n_eval == 0 || n_eval >= ds.len() {
        return Err(Error::invalid(format!(
            "eval_fraction {eval_fraction} leaves an empty side for {} samples",
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng::stream(seed, &[rng::purpose::SPLIT]));
    let (eval, train) = order.split_at(n_eval);
    let mut train = train.to_vec();
    let mut eval = eval.to_vec();
    train.sort_unstable();
    eval.sort_unstable();
    Ok((ds.subset(&train)?, ds.subset(&eval)?))
}

/// Disjoint per-client index lists into a parent dataset, with aggregation
/// coefficients equal to each client's sample share.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub clients: Vec<Vec<usize>>,
    pub coefficients: Vec<f64>,
}

impl PartitionPlan {
    /// Build a plan from index lists, deriving the coefficients.
    pub fn from_clients(clients: Vec<Vec<usize>>) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::invalid("a partition needs at least one client"));
        }
        if let Some(i) = clients.iter().position(Vec::is_empty) {
            return Err(Error::invalid(format!("client {i} holds no samples")));
        }
        let total: usize = clients.iter().map(Vec::len).sum();
        let coefficients = clients.iter().map(|c| c.len() as f64 / total as f64).collect();
        Ok(PartitionPlan { clients, coefficients })
    }

    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn total_samples(&self) -> usize {
        self.clients.iter().map(Vec::len).sum()
    }

    /// Check that the lists are disjoint and cover `0..n` exactly.
    pub fn validate_against(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for (c, list) in self.clients.iter().enumerate() {
            for &i in list {
                if i >= n {
                    return Err(Error::invalid(format!(
                        "client {c}: index {i} out of range ({n} samples)"
                    )));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::invalid(format!("index {i} assigned twice")));
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("index {i} not assigned to any client")));
        }
        Ok(())
    }

    /// One line per client, indices separated by single spaces.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for list in &self.clients {
            for (k, i) in list.iter().enumerate() {
                if k > 0 {
                    out.push(' ');
                }
                write!(out, "{i}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let clients = text
            .lines()
            .enumerate()
            .map(|(line, l)| {
                l.split_whitespace()
                    .map(|tok| {
                        tok.parse::<usize>()
                            .map_err(|_| Error::invalid(format!("line {}: invalid index '{tok}'", line + 1)))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_clients(clients)
    }
}

fn dirichlet_proportions<R: Rng + ?Sized>(n: usize, alpha: f64, r: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    loop {
        let draws: Vec<f64> = (0..n).map(|_| gamma.sample(r)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return draws.into_iter().map(|g| g / total).collect();
        }
    }
}

/// Per-class Dirichlet(alpha) allocation of samples to `n_clients`.
///
/// Within each class the shuffled sample list is cut at the cumulative
/// Dirichlet proportions. Clients left empty afterwards receive one sample
/// from the currently largest client.
pub fn dirichlet_partition(ds: &LabeledDataset, n_clients: usize, alpha: f64, seed: u64) -> Result<PartitionPlan> {
    if n_clients == 0 {
        return Err(Error::invalid("n_clients must be at least 1"));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    if n_clients > ds.len() {
        return Err(Error::invalid(format!("{n_clients} clients for {} samples", ds.len())));
    }
    let mut r = rng::stream(seed, &[rng::purpose::PARTITION]);
    let mut clients: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
    for class in 0..2u8 {
        let mut members: Vec<usize> = (0..ds.len()).filter(|&i| ds.label(i) == class).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut r);
        let props = dirichlet_proportions(n_clients, alpha, &mut r);
        let n = members.len();
        let mut start = 0;
        let mut cum = 0.0;
        for (c, p) in props.iter().enumerate() {
            cum += p;
            let end = if c + 1 == n_clients {
                n
            } else {
                ((cum * n as f64) as usize).clamp(start, n)
            };
            clients[c].extend_from_slice(&members[start..end]);
            start = end;
        }
    }
    while let Some(empty) = clients.iter().position(Vec::is_empty) {
        let largest = (0..n_clients)
            .max_by_key(|&c| (clients[c].len(), std::cmp::Reverse(c)))
            .expect("at least one client");
        let moved = clients[largest].pop().expect("largest client is non-empty");
        clients[empty].push(moved);
    }
    PartitionPlan::from_clients(clients)
}

fn cell_distribution(ds: &LabeledDataset, indices: impl Iterator<Item = usize>) -> [f64; 4] {
    let mut counts = [0usize; 4];
    let mut n = 0usize;
    for i in indices {
        counts[2 * ds.label(i) as usize + ds.sensitive(i) as usize] += 1;
        n += 1;
    }
    counts.map(|c| c as f64 / n as f64)
}

/// Mean total-variation distance between each client's (label, group)
/// distribution and the distribution over all of the plan's samples.
pub fn heterogeneity_report(plan: &PartitionPlan, ds: &LabeledDataset) -> f64 {
    let global = cell_distribution(ds, plan.clients.iter().flatten().copied());
    let total: f64 = plan
        .clients
        .iter()
        .map(|list| {
            let local = cell_distribution(ds, list.iter().copied());
            0.5 * local.iter().zip(&global).map(|(a, b)| (a - b).abs()).sum::<f64>()
        })
        .sum();
    total / plan.n_clients() as f64
}
