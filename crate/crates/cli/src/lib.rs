//! Subcommands of the `ffalm` binary.
//!
//! Every command writes its artifacts through [`Outputs`], which deletes
//! whatever it created if the command fails part way.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use ffalm::engine::Algorithm;
use ffalm::gradcheck::run_gradcheck;
use ffalm::io::{self, ComparisonReport, RunConfig};
use ffalm::theory::{self, JointTable, RateExperiment, TestbedProblem};
use ffalm::MetricsLog;

#[derive(Parser, Debug)]
#[command(name = "ffalm", version, about = "Fairness-constrained federated learning simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Partition the training split across clients and write the plan
    Partition(PartitionArgs),
    /// Train one algorithm and write per-round metrics and the final model
    Train(TrainArgs),
    /// Run several algorithms over several seeds and summarize the final round
    Compare(CompareArgs),
    /// Measure the convergence rate on the minimax testbed
    RateCheck(RateCheckArgs),
    /// Check analytic gradients against central differences
    Gradcheck(GradcheckArgs),
    /// Probe whether equal error rates imply equal opportunity and parity
    Probe(ProbeArgs),
}

#[derive(Args, Debug)]
pub struct ConfigArg {
    /// Configuration file (`key = value` lines); defaults apply when omitted
    #[arg(short, long)]
    pub config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig> {
        match &self.config {
            Some(p) => Ok(io::load_config(p)?),
            None => Ok(RunConfig::default()),
        }
    }
}

#[derive(Args, Debug)]
pub struct PartitionArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Partition seed (defaults to the first configured seed)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Plan file to write
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the training split the plan indexes into
    #[arg(long)]
    pub data_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub algorithm: Option<Algorithm>,
    /// Run only this seed instead of the configured list
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Output directory (defaults to the configured one)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Comma-separated algorithms
    #[arg(long, value_delimiter = ',', default_value = "fedavg,ffalm,fpfl,fairfed")]
    pub algorithms: Vec<Algorithm>,
    /// Use seeds 0..N
    #[arg(long, conflicts_with = "seed_list")]
    pub seeds: Option<u64>,
    /// Explicit comma-separated seeds
    #[arg(long, value_delimiter = ',')]
    pub seed_list: Option<Vec<u64>>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RateCheckArgs {
    #[arg(long, default_value = "rate_gaps.csv")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
    pub min_slope: f64,
    #[arg(long, default_value_t = -0.55, allow_negative_numbers = true)]
    pub max_slope: f64,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
}

#[derive(Args, Debug)]
pub struct ProbeArgs {
    /// Eight probabilities P(Y, S, Yhat) in (y, s, yhat) order
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub table: Option<Vec<f64>>,
    /// Random equal-error-rate tables to sweep when no table is given
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Files created by a command, removed again if it fails.
#[derive(Debug, Default)]
pub struct Outputs {
    created: Vec<PathBuf>,
}

impl Outputs {
    /// Create parent directories, record `path` and hand it to `write`.
    pub fn write_with<F>(&mut self, path: &Path, write: F) -> Result<()>
    where
        F: FnOnce(&Path) -> ffalm::Result<()>,
    {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        self.created.push(path.to_path_buf());
        write(path).with_context(|| format!("writing {}", path.display()))
    }

    pub fn write_text(&mut self, path: &Path, text: &str) -> Result<()> {
        self.write_with(path, |p| {
            std::fs::write(p, text).map_err(|e| ffalm::Error::Io {
                path: p.to_path_buf(),
                source: e,
            })
        })
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.created
    }

    fn discard(&mut self) {
        for p in self.created.drain(..) {
            let _ = std::fs::remove_file(p);
        }
    }
}

/// Run a command; on error every file it wrote is removed.
pub fn run(cli: &Cli) -> Result<ExitCode> {
    let mut outputs = Outputs::default();
    let result = match &cli.command {
        Command::Partition(a) => cmd_partition(a, &mut outputs).context("partition"),
        Command::Train(a) => cmd_train(a, &mut outputs).context("train"),
        Command::Compare(a) => cmd_compare(a, &mut outputs).context("compare"),
        Command::RateCheck(a) => cmd_rate_check(a, &mut outputs).context("rate-check"),
        Command::Gradcheck(a) => cmd_gradcheck(a).context("gradcheck"),
        Command::Probe(a) => cmd_probe(a).context("probe"),
    };
    if result.is_err() {
        outputs.discard();
    }
    result
}

pub fn metrics_file_name(algorithm: Algorithm, seed: u64) -> String {
    format!("metrics_{algorithm}_seed{seed}.csv")
}

pub fn model_file_name(algorithm: Algorithm, seed: u64) -> String {
    format!("model_{algorithm}_seed{seed}.bin")
}

pub fn cmd_partition(args: &PartitionArgs, outputs: &mut Outputs) -> Result<ExitCode> {
    let rc = args.config.load()?;
    let seed = args.seed.unwrap_or(rc.seeds[0]);
    let (train, _) = rc.prepare_data()?;
    let plan = rc.partition(&train, seed)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| rc.output_dir.join(format!("partition_seed{seed}.txt")));
    outputs.write_text(&out, &plan.to_text())?;
    if let Some(data_out) = &args.data_out {
        outputs.write_with(data_out, |p| io::write_csv_dataset(p, &train))?;
    }
    let heterogeneity = ffalm::partition::heterogeneity_report(&plan, &train);
    let sizes: Vec<String> = plan.clients.iter().map(|c| c.len().to_string()).collect();
    println!(
        "{} clients, sizes [{}], heterogeneity {heterogeneity:.4} -> {}",
        plan.n_clients(),
        sizes.join(" "),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn write_run(outputs: &mut Outputs, dir: &Path, log: &MetricsLog) -> Result<()> {
    outputs.write_text(
        &dir.join(metrics_file_name(log.algorithm, log.seed)),
        &io::metrics_csv(log),
    )?;
    outputs.write_with(&dir.join(model_file_name(log.algorithm, log.seed)), |p| {
        io::write_checkpoint(p, &log.final_params)
    })
}

pub fn cmd_train(args: &TrainArgs, outputs: &mut Outputs) -> Result<ExitCode> {
    let mut rc = args.config.load()?;
    if let Some(r) = args.rounds {
        rc.federation.rounds = r;
    }
    if let Some(a) = args.algorithm {
        rc.federation.algorithm = a;
    }
    let seeds = args.seed.map_or_else(|| rc.seeds.clone(), |s| vec![s]);
    let dir = args.out.clone().unwrap_or_else(|| rc.output_dir.clone());
    let (train, eval) = rc.prepare_data()?;
    for seed in seeds {
        let log = rc
            .run(rc.federation.algorithm, seed, &train, &eval)
            .with_context(|| format!("seed {seed}"))?;
        write_run(outputs, &dir, &log)?;
        let last = log.last();
        println!(
            "{} seed {seed}: round {} acc {:.4} dpd {:.4} eod {:.4} lambda {:.4}",
            log.algorithm, last.round, last.report.accuracy, last.report.dpd, last.report.eod, last.lambda
        );
    }
    Ok(ExitCode::SUCCESS)
}

/// Train every (algorithm, seed) pair and summarize the final rounds.
pub fn compare_runs(
    rc: &RunConfig,
    algorithms: &[Algorithm],
    seeds: &[u64],
) -> Result<(Vec<MetricsLog>, ComparisonReport)> {
    let (train, eval) = rc.prepare_data()?;
    let pairs: Vec<(Algorithm, u64)> = algorithms
        .iter()
        .flat_map(|&a| seeds.iter().map(move |&s| (a, s)))
        .collect();
    let logs = pairs
        .par_iter()
        .map(|&(a, s)| rc.run(a, s, &train, &eval).with_context(|| format!("{a} seed {s}")))
        .collect::<Result<Vec<_>>>()?;
    let runs: Vec<(Algorithm, Vec<ffalm::FairnessReport>)> = algorithms
        .iter()
        .map(|&a| {
            let reports = logs
                .iter()
                .filter(|l| l.algorithm == a)
                .map(|l| l.last().report)
                .collect();
            (a, reports)
        })
        .collect();
    let report = ComparisonReport::from_reports(&runs)?;
    Ok((logs, report))
}

pub fn cmd_compare(args: &CompareArgs, outputs: &mut Outputs) -> Result<ExitCode> {
    let mut rc = args.config.load()?;
    if let Some(r) = args.rounds {
        rc.federation.rounds = r;
    }
    let seeds: Vec<u64> = match (&args.seed_list, args.seeds) {
        (Some(list), _) => list.clone(),
        (None, Some(n)) => (0..n).collect(),
        (None, None) => rc.seeds.clone(),
    };
    if seeds.is_empty() || args.algorithms.is_empty() {
        bail!("need at least one algorithm and one seed");
    }
    let mut algorithms = args.algorithms.clone();
    algorithms.dedup();
    let dir = args.out.clone().unwrap_or_else(|| rc.output_dir.clone());
    let (logs, report) = compare_runs(&rc, &algorithms, &seeds)?;
    for log in &logs {
        outputs.write_text(
            &dir.join(metrics_file_name(log.algorithm, log.seed)),
            &io::metrics_csv(log),
        )?;
    }
    outputs.write_text(&dir.join("comparison.csv"), &report.to_csv())?;
    let text = format!(
        "final round, median over {} seeds (IQR)\n{}",
        seeds.len(),
        report.to_text()
    );
    outputs.write_text(&dir.join("comparison.txt"), &text)?;
    print!("{text}");
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_rate_check(args: &RateCheckArgs, outputs: &mut Outputs) -> Result<ExitCode> {
    if args.min_slope >= args.max_slope || args.min_slope.is_nan() || args.max_slope.is_nan() {
        bail!("--min-slope must be below --max-slope");
    }
    let problem = TestbedProblem::reference();
    let mut cfg = RateExperiment::default_config();
    cfg.seed = args.seed;
    let exp = RateExperiment {
        repetitions: args.repetitions,
        ..RateExperiment::default()
    };
    let points = theory::run_rate_experiment(&problem, &cfg, &exp)?;
    outputs.write_with(&args.out, |p| theory::write_gap_csv(p, &points))?;
    let series: Vec<(usize, f64)> = points.iter().map(|p| (p.t, p.mean)).collect();
    let slope = theory::fit_rate(&series)?;
    let pass = (args.min_slope..=args.max_slope).contains(&slope);
    println!(
        "gamma {:.6}; fitted slope {slope:.4} over t = {:?}, window [{}, {}]: {}",
        theory::gamma(&problem),
        exp.checkpoints,
        args.min_slope,
        args.max_slope,
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<ExitCode> {
    let report = run_gradcheck(args.instances, args.seed)?;
    let pass = report.max_rel_error < args.tolerance;
    println!(
        "max relative error {:.3e} over {} instances ({} coordinates), tolerance {:e}: {}",
        report.max_rel_error,
        report.instances,
        report.coordinates,
        args.tolerance,
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

pub fn cmd_probe(args: &ProbeArgs) -> Result<ExitCode> {
    match &args.table {
        Some(values) => {
            let table = JointTable::from_values(values)?;
            let r = theory::implication_probe(&table)?;
            let equal = r.ap_gaps.iter().all(|g| *g < 1e-12);
            println!(
                "error-rate gaps y=0 {:.6} y=1 {:.6}; eod {:.6}; dpd {:.6}; equal error rates: {}; EO: {}; DP: {}",
                r.ap_gaps[0],
                r.ap_gaps[1],
                r.eod,
                r.dpd,
                if equal { "yes" } else { "no" },
                if r.eod < 1e-9 { "holds" } else { "violated" },
                if r.dpd < 1e-9 { "holds" } else { "violated" },
            );
            print!("{table}");
        }
        None => println!("{}", theory::probe_sweep(args.trials, args.seed)?),
    }
    Ok(ExitCode::SUCCESS)
}
