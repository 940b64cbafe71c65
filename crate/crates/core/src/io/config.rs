use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::LabeledDataset;
use crate::engine::{run_training, Algorithm, FederationConfig, MetricsLog, ModelKind, SchedulerMode};
use crate::error::{Error, Result};
use crate::model::{CeMode, SingleGroupPolicy};
use crate::partition::{dirichlet_partition, generate_biased, train_eval_split, PartitionPlan, SynthConfig};

use super::tables::load_csv_dataset;

/// Every key a configuration file may set.
pub const CONFIG_KEYS: &[&str] = &[
    "algorithm",
    "clients",
    "local_steps",
    "rounds",
    "batch_size",
    "eta_w0",
    "lr_decay_step",
    "lr_decay_factor",
    "eta_lambda0",
    "dual_growth",
    "lambda0",
    "penalty_beta",
    "fpfl_beta",
    "fpfl_eta_lambda",
    "fairfed_beta",
    "clip_norm",
    "scheduler",
    "theory_c_w",
    "theory_c_lambda",
    "model",
    "hidden",
    "ce",
    "single_group",
    "data",
    "n_samples",
    "dim",
    "p_group1",
    "p_pos_s0",
    "p_pos_s1",
    "class_separation",
    "group_shift",
    "noise_scale",
    "data_seed",
    "alpha",
    "eval_fraction",
    "seeds",
    "output_dir",
];

const SYNTH_KEYS: &[&str] = &[
    "n_samples",
    "dim",
    "p_group1",
    "p_pos_s0",
    "p_pos_s1",
    "class_separation",
    "group_shift",
    "noise_scale",
];

const DEFAULT_HIDDEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv(PathBuf),
    Synthetic(SynthConfig),
}

/// Everything one experiment needs: federation hyperparameters, where the
/// data comes from, how it is split and partitioned, and which seeds to run.
///
/// The parent dataset (and its held-out evaluation split) depends only on
/// `data_seed`; each run seed drives the partition and training.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub federation: FederationConfig,
    pub data: DataSource,
    pub data_seed: u64,
    pub alpha: f64,
    pub eval_fraction: f64,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            federation: FederationConfig::default(),
            data: DataSource::Synthetic(SynthConfig::default()),
            data_seed: 0,
            alpha: 0.3,
            eval_fraction: 0.2,
            seeds: vec![0],
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Load or generate the parent dataset and split off the evaluation set.
    /// Returns `(train, eval)`.
    pub fn prepare_data(&self) -> Result<(LabeledDataset, LabeledDataset)> {
        let parent = match &self.data {
            DataSource::Csv(path) => load_csv_dataset(path)?,
            DataSource::Synthetic(cfg) => generate_biased(cfg, self.data_seed)?,
        };
        train_eval_split(&parent, self.eval_fraction, self.data_seed)
    }

    pub fn partition(&self, train: &LabeledDataset, seed: u64) -> Result<PartitionPlan> {
        dirichlet_partition(train, self.federation.n_clients, self.alpha, seed)
    }

    /// Federation settings for one run.
    pub fn federation_for(&self, algorithm: Algorithm, seed: u64) -> FederationConfig {
        FederationConfig {
            algorithm,
            seed,
            ..self.federation.clone()
        }
    }

    /// Partition `train` with `seed` and train `algorithm` on it.
    pub fn run(
        &self,
        algorithm: Algorithm,
        seed: u64,
        train: &LabeledDataset,
        eval: &LabeledDataset,
    ) -> Result<MetricsLog> {
        let plan = self.partition(train, seed)?;
        run_training(&self.federation_for(algorithm, seed), &plan, train, eval)
    }

    /// Configuration text that parses back to this value.
    pub fn to_config_text(&self) -> String {
        let f = &self.federation;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("algorithm", f.algorithm.to_string());
        put("clients", f.n_clients.to_string());
        put("local_steps", f.local_steps.to_string());
        put("rounds", f.rounds.to_string());
        put("batch_size", f.batch_size.to_string());
        put("eta_w0", f.eta_w0.to_string());
        put("lr_decay_step", f.lr_decay_step.to_string());
        put("lr_decay_factor", f.lr_decay_factor.to_string());
        put("eta_lambda0", f.eta_lambda0.to_string());
        put("dual_growth", f.dual_growth.to_string());
        put("lambda0", f.lambda0.to_string());
        put("penalty_beta", f.penalty_beta.to_string());
        put("fpfl_beta", f.fpfl_beta.to_string());
        put("fpfl_eta_lambda", f.fpfl_eta_lambda.to_string());
        put("fairfed_beta", f.fairfed_beta.to_string());
        put("clip_norm", f.clip_norm.to_string());
        put(
            "scheduler",
            match f.scheduler {
                SchedulerMode::Empirical => "empirical",
                SchedulerMode::Theory => "theory",
            }
            .into(),
        );
        put("theory_c_w", f.theory_c_w.to_string());
        put("theory_c_lambda", f.theory_c_lambda.to_string());
        match f.model {
            ModelKind::Linear => put("model", "linear".into()),
            ModelKind::Mlp { hidden } => {
                put("model", "mlp".into());
                put("hidden", hidden.to_string());
            }
        }
        put(
            "ce",
            match f.loss.ce {
                CeMode::Sigmoid => "sigmoid",
                CeMode::Softmax => "softmax",
            }
            .into(),
        );
        put(
            "single_group",
            match f.loss.single_group {
                SingleGroupPolicy::Lenient => "lenient",
                SingleGroupPolicy::Strict => "strict",
            }
            .into(),
        );
        match &self.data {
            DataSource::Csv(p) => put("data", p.display().to_string()),
            DataSource::Synthetic(s) => {
                put("n_samples", s.n_samples.to_string());
                put("dim", s.dim.to_string());
                put("p_group1", s.p_group1.to_string());
                put("p_pos_s0", s.p_pos_s0.to_string());
                put("p_pos_s1", s.p_pos_s1.to_string());
                put("class_separation", s.class_separation.to_string());
                put("group_shift", s.group_shift.to_string());
                put("noise_scale", s.noise_scale.to_string());
            }
        }
        put("data_seed", self.data_seed.to_string());
        put("alpha", self.alpha.to_string());
        put("eval_fraction", self.eval_fraction.to_string());
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        put("seeds", seeds.join(","));
        put("output_dir", self.output_dir.display().to_string());
        out
    }
}

type Check<T> = fn(&T) -> std::result::Result<(), &'static str>;

fn parse<T: FromStr>(raw: &str, check: Check<T>) -> std::result::Result<T, String> {
    let v: T = raw
        .parse()
        .map_err(|_| format!("invalid value '{raw}' ({})", std::any::type_name::<T>()))?;
    check(&v).map_err(str::to_string)?;
    Ok(v)
}

fn any<T>(_: &T) -> std::result::Result<(), &'static str> {
    Ok(())
}

fn at_least_one(v: &usize) -> std::result::Result<(), &'static str> {
    if *v >= 1 {
        Ok(())
    } else {
        Err("must be at least 1")
    }
}

fn positive(v: &f64) -> std::result::Result<(), &'static str> {
    if v.is_finite() && *v > 0.0 {
        Ok(())
    } else {
        Err("must be positive")
    }
}

fn non_negative(v: &f64) -> std::result::Result<(), &'static str> {
    if v.is_finite() && *v >= 0.0 {
        Ok(())
    } else {
        Err("must be non-negative")
    }
}

fn finite(v: &f64) -> std::result::Result<(), &'static str> {
    if v.is_finite() {
        Ok(())
    } else {
        Err("must be finite")
    }
}

fn probability(v: &f64) -> std::result::Result<(), &'static str> {
    if (0.0..=1.0).contains(v) {
        Ok(())
    } else {
        Err("must lie in [0, 1]")
    }
}

fn parse_seeds(raw: &str) -> std::result::Result<Vec<u64>, String> {
    let bad = || format!("invalid seed list '{raw}'");
    let seeds = if let Some((a, b)) = raw.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        (a..b).collect()
    } else {
        raw.split(',')
            .map(|s| s.trim().parse::<u64>().map_err(|_| bad()))
            .collect::<std::result::Result<Vec<_>, _>>()?
    };
    if seeds.is_empty() {
        return Err("seed list is empty".into());
    }
    Ok(seeds)
}

/// Parse configuration text. `path` names the file in error messages and
/// anchors relative data paths.
pub fn parse_config(text: &str, path: &Path) -> Result<RunConfig> {
    let err = |line: usize, message: String| Error::Config {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rc = RunConfig::default();
    let mut synth = SynthConfig::default();
    let mut data: Option<(usize, PathBuf)> = None;
    let mut synth_line: Option<(usize, &str)> = None;
    let mut model: Option<(usize, String)> = None;
    let mut hidden: Option<(usize, usize)> = None;
    let mut seen: HashMap<String, usize> = HashMap::new();

    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(line, format!("expected 'key = value', found '{content}'")))?;
        let key = key.trim();
        let value = value.trim();
        if !CONFIG_KEYS.contains(&key) {
            return Err(err(line, format!("unknown key '{key}'")));
        }
        if let Some(first) = seen.insert(key.to_string(), line) {
            return Err(err(line, format!("{key}: duplicate key (first set on line {first})")));
        }
        let f = &mut rc.federation;
        let result: std::result::Result<(), String> = (|| {
            match key {
                "algorithm" => f.algorithm = value.parse().map_err(|e: Error| e.to_string())?,
                "clients" => f.n_clients = parse(value, at_least_one)?,
                "local_steps" => f.local_steps = parse(value, at_least_one)?,
                "rounds" => f.rounds = parse(value, any)?,
                "batch_size" => f.batch_size = parse(value, at_least_one)?,
                "eta_w0" => f.eta_w0 = parse(value, positive)?,
                "lr_decay_step" => f.lr_decay_step = parse(value, at_least_one)?,
                "lr_decay_factor" => f.lr_decay_factor = parse(value, positive)?,
                "eta_lambda0" => f.eta_lambda0 = parse(value, non_negative)?,
                "dual_growth" => {
                    f.dual_growth = parse(value, |v: &f64| {
                        if v.is_finite() && *v >= 1.0 {
                            Ok(())
                        } else {
                            Err("must be at least 1")
                        }
                    })?
                }
                "lambda0" => f.lambda0 = parse(value, finite)?,
                "penalty_beta" => f.penalty_beta = parse(value, non_negative)?,
                "fpfl_beta" => f.fpfl_beta = parse(value, non_negative)?,
                "fpfl_eta_lambda" => f.fpfl_eta_lambda = parse(value, positive)?,
                "fairfed_beta" => f.fairfed_beta = parse(value, non_negative)?,
                "clip_norm" => f.clip_norm = parse(value, positive)?,
                "scheduler" => f.scheduler = value.parse().map_err(|e: Error| e.to_string())?,
                "theory_c_w" => f.theory_c_w = parse(value, positive)?,
                "theory_c_lambda" => f.theory_c_lambda = parse(value, positive)?,
                "model" => match value {
                    "linear" | "mlp" => model = Some((line, value.to_string())),
                    _ => return Err(format!("unknown model '{value}' (linear or mlp)")),
                },
                "hidden" => hidden = Some((line, parse(value, at_least_one)?)),
                "ce" => {
                    f.loss.ce = match value {
                        "sigmoid" => CeMode::Sigmoid,
                        "softmax" => CeMode::Softmax,
                        _ => return Err(format!("unknown cross-entropy '{value}' (sigmoid or softmax)")),
                    }
                }
                "single_group" => {
                    f.loss.single_group = match value {
                        "lenient" => SingleGroupPolicy::Lenient,
                        "strict" => SingleGroupPolicy::Strict,
                        _ => return Err(format!("unknown policy '{value}' (lenient or strict)")),
                    }
                }
                "data" => {
                    let p = PathBuf::from(value.trim_matches('"'));
                    let p = if p.is_relative() {
                        path.parent().map(|d| d.join(&p)).unwrap_or(p)
                    } else {
                        p
                    };
                    if !p.is_file() {
                        return Err(format!("data file {} does not exist", p.display()));
                    }
                    data = Some((line, p));
                }
                "n_samples" => {
                    synth.n_samples = parse(
                        value,
                        |v: &usize| if *v >= 4 { Ok(()) } else { Err("must be at least 4") },
                    )?
                }
                "dim" => synth.dim = parse(value, at_least_one)?,
                "p_group1" => synth.p_group1 = parse(value, probability)?,
                "p_pos_s0" => synth.p_pos_s0 = parse(value, probability)?,
                "p_pos_s1" => synth.p_pos_s1 = parse(value, probability)?,
                "class_separation" => synth.class_separation = parse(value, non_negative)?,
                "group_shift" => synth.group_shift = parse(value, non_negative)?,
                "noise_scale" => synth.noise_scale = parse(value, non_negative)?,
                "data_seed" => rc.data_seed = parse(value, any)?,
                "alpha" => rc.alpha = parse(value, positive)?,
                "eval_fraction" => {
                    rc.eval_fraction = parse(value, |v: &f64| {
                        if *v > 0.0 && *v < 1.0 {
                            Ok(())
                        } else {
                            Err("must lie in (0, 1)")
                        }
                    })?
                }
                "seeds" => rc.seeds = parse_seeds(value)?,
                "output_dir" => rc.output_dir = PathBuf::from(value.trim_matches('"')),
                _ => unreachable!("key list and match arms agree"),
            }
            Ok(())
        })();
        result.map_err(|m| err(line, if m.starts_with(key) { m } else { format!("{key}: {m}") }))?;
        if SYNTH_KEYS.contains(&key) && synth_line.is_none() {
            synth_line = Some((line, key));
        }
    }

    rc.federation.model = match (&model, hidden) {
        (Some((_, m)), Some((_, h))) if m == "mlp" => ModelKind::Mlp { hidden: h },
        (Some((_, m)), None) if m == "mlp" => ModelKind::Mlp { hidden: DEFAULT_HIDDEN },
        (_, Some((line, _))) => return Err(err(line, "hidden: only valid with model = mlp".into())),
        _ => ModelKind::Linear,
    };
    rc.data = match (data, synth_line) {
        (Some((_, _)), Some((line, key))) => {
            return Err(err(
                line,
                format!("{key}: synthetic-data keys cannot be combined with data"),
            ))
        }
        (Some((_, p)), None) => DataSource::Csv(p),
        (None, _) => {
            synth.validate().map_err(|e| err(0, e.to_string()))?;
            DataSource::Synthetic(synth)
        }
    };
    rc.federation.validate().map_err(|e| err(0, e.to_string()))?;
    Ok(rc)
}

/// Read and parse a configuration file. An empty file yields the defaults.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, path)
}
