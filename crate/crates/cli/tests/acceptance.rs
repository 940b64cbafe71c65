//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::Rng;

use ffalm::engine::Algorithm;
use ffalm::fairness::{dpd, eod};
use ffalm::gradcheck::run_gradcheck;
use ffalm::io::{RunConfig, Summary};
use ffalm::partition::{dirichlet_partition, heterogeneity_report};
use ffalm::theory::{
    fit_rate, gamma, probe_sweep, run_rate_experiment, PrimalBase, RateExperiment, TestbedClient, TestbedProblem,
};
use ffalm::{rng, MetricsLog};

struct Outcome {
    pass: bool,
    detail: String,
}

fn criterion(id: usize, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let mut out = f();
    let elapsed = start.elapsed();
    if let Some(b) = budget {
        if elapsed > b {
            out.pass = false;
            out.detail.push_str(&format!("; over budget {b:?}"));
        }
    }
    println!(
        "{} {id} {name}: {} [{:.2}s]",
        if out.pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64()
    );
    out.pass
}

fn gradient_correctness() -> Outcome {
    let r = run_gradcheck(100, 0).unwrap();
    Outcome {
        pass: r.max_rel_error < 1e-5,
        detail: format!(
            "max rel error {:.3e} over {} coordinates",
            r.max_rel_error, r.coordinates
        ),
    }
}

fn oracle_rates(pred: &[u8], labels: &[u8], sens: &[u8], tpr: bool) -> Option<f64> {
    let mut num = [0u32; 2];
    let mut den = [0u32; 2];
    for i in 0..pred.len() {
        if tpr && labels[i] != 1 {
            continue;
        }
        let g = sens[i] as usize;
        den[g] += 1;
        num[g] += pred[i] as u32;
    }
    if den[0] == 0 || den[1] == 0 {
        return None;
    }
    Some((num[0] as f64 / den[0] as f64 - num[1] as f64 / den[1] as f64).abs())
}

fn fill_bits(mask: u32, out: &mut [u8]) {
    for (i, v) in out.iter_mut().enumerate() {
        *v = ((mask >> i) & 1) as u8;
    }
}

fn metric_oracle() -> Outcome {
    let mut cases = 0u64;
    let mut worst = 0.0f64;
    let mut mismatches = 0u64;
    let (mut pred, mut labels, mut sens) = ([0u8; 8], [0u8; 8], [0u8; 8]);
    for n in 1..=8usize {
        let all = 1u32 << n;
        for s_mask in 0..all {
            fill_bits(s_mask, &mut sens[..n]);
            for y_mask in 0..all {
                fill_bits(y_mask, &mut labels[..n]);
                for p_mask in 0..all {
                    fill_bits(p_mask, &mut pred[..n]);
                    let (p, y, s) = (&pred[..n], &labels[..n], &sens[..n]);
                    for (got, want) in [
                        (dpd(p, s).ok(), oracle_rates(p, y, s, false)),
                        (eod(p, y, s).ok(), oracle_rates(p, y, s, true)),
                    ] {
                        match (got, want) {
                            (Some(g), Some(w)) => {
                                cases += 1;
                                worst = worst.max((g - w).abs());
                            }
                            (None, None) => {}
                            _ => mismatches += 1,
                        }
                    }
                }
            }
        }
    }
    Outcome {
        pass: worst <= 1e-15 && mismatches == 0,
        detail: format!("{cases} defined cases, max deviation {worst:e}, definedness mismatches {mismatches}"),
    }
}

fn rate_reproduction() -> Outcome {
    let problem = TestbedProblem::reference();
    let exp = RateExperiment::default();
    let points = run_rate_experiment(&problem, &RateExperiment::default_config(), &exp).unwrap();
    let series: Vec<(usize, f64)> = points.iter().map(|p| (p.t, p.mean)).collect();
    match fit_rate(&series) {
        Ok(slope) => Outcome {
            pass: (-1.0..=-0.55).contains(&slope),
            detail: format!(
                "slope {slope:.4} over t = {:?}, {} repetitions",
                exp.checkpoints, exp.repetitions
            ),
        },
        Err(e) => Outcome {
            pass: false,
            detail: e.to_string(),
        },
    }
}

fn final_metrics(logs: &[MetricsLog]) -> (Summary, Summary, Summary) {
    let col = |f: fn(&MetricsLog) -> f64| Summary::of(&logs.iter().map(f).collect::<Vec<_>>()).unwrap();
    (
        col(|l| l.last().report.dpd),
        col(|l| l.last().report.eod),
        col(|l| l.last().report.accuracy),
    )
}

fn fairness_improvement() -> Outcome {
    let rc = RunConfig::default();
    let (train, eval) = rc.prepare_data().unwrap();
    let run = |a: Algorithm| -> Vec<MetricsLog> { (0..10).map(|s| rc.run(a, s, &train, &eval).unwrap()).collect() };
    let (base_dpd, base_eod, base_acc) = final_metrics(&run(Algorithm::FedAvg));
    let (dpd, eod, acc) = final_metrics(&run(Algorithm::Ffalm));
    let dpd_ratio = dpd.median / base_dpd.median;
    let eod_ratio = eod.median / base_eod.median;
    let drop_pp = 100.0 * (base_acc.median - acc.median);
    Outcome {
        pass: dpd_ratio <= 0.85 && eod_ratio <= 0.85 && drop_pp <= 2.0,
        detail: format!(
            "dpd {:.4} vs {:.4} (ratio {dpd_ratio:.3}), eod {:.4} vs {:.4} (ratio {eod_ratio:.3}), accuracy drop {drop_pp:.2} pp",
            dpd.median, base_dpd.median, eod.median, base_eod.median
        ),
    }
}

fn heterogeneity_trend() -> Outcome {
    let rc = RunConfig::default();
    let (train, _) = rc.prepare_data().unwrap();
    let medians: Vec<f64> = [0.3, 1.0, 5.0]
        .iter()
        .map(|&alpha| {
            let values: Vec<f64> = (0..10)
                .map(|s| heterogeneity_report(&dirichlet_partition(&train, 10, alpha, s).unwrap(), &train))
                .collect();
            Summary::of(&values).unwrap().median
        })
        .collect();
    Outcome {
        pass: medians.windows(2).all(|w| w[0] > w[1]),
        detail: format!("median heterogeneity at alpha 0.3/1/5: {medians:.4?}"),
    }
}

fn reduction_identity() -> Outcome {
    let mut rc = RunConfig::default();
    rc.federation.lambda0 = 0.0;
    rc.federation.eta_lambda0 = 0.0;
    rc.federation.penalty_beta = 0.0;
    let (train, eval) = rc.prepare_data().unwrap();
    let mut identical = 0;
    for seed in 0..3 {
        let fedavg = rc.run(Algorithm::FedAvg, seed, &train, &eval).unwrap();
        let mut ffalm = rc.run(Algorithm::Ffalm, seed, &train, &eval).unwrap();
        ffalm.algorithm = Algorithm::FedAvg;
        let bits = |l: &MetricsLog| -> Vec<u64> {
            l.records
                .iter()
                .flat_map(|r| {
                    [
                        r.eta_w,
                        r.eta_lambda,
                        r.lambda,
                        r.train_loss,
                        r.report.accuracy,
                        r.report.dpd,
                        r.report.eod,
                    ]
                })
                .chain(l.final_params.values().iter().copied())
                .map(f64::to_bits)
                .collect()
        };
        if bits(&fedavg) == bits(&ffalm) && fedavg.records.len() == ffalm.records.len() {
            identical += 1;
        }
    }
    Outcome {
        pass: identical == 3,
        detail: format!("{identical}/3 seeds bit-identical"),
    }
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn train_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.cfg");
    std::fs::write(&config, "algorithm = ffalm\nseeds = 4\n").unwrap();
    let mut outputs = Vec::new();
    for trial in 0..3 {
        let out = tmp.path().join(format!("trial{trial}"));
        let status = Command::new(env!("CARGO_BIN_EXE_ffalm"))
            .arg("train")
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        outputs.push(read_dir_bytes(&out));
    }
    let same = outputs.windows(2).all(|w| w[0] == w[1]);
    Outcome {
        pass: same && outputs[0].len() == 2,
        detail: format!(
            "{} files per trial, byte-identical across 3 trials: {same}",
            outputs[0].len()
        ),
    }
}

fn implication_probe() -> Outcome {
    let sweep = probe_sweep(1000, 0).unwrap();
    Outcome {
        pass: sweep.trials == 1000 && sweep.max_eod < 1e-9,
        detail: format!(
            "max eod {:.3e}; max dpd under unequal base rates {:.4} (reported only)",
            sweep.max_eod, sweep.max_dpd
        ),
    }
}

fn gamma_sanity() -> Outcome {
    let clone = TestbedClient {
        a: 1.3,
        c: 0.7,
        shift: 0.0,
    };
    let cloned = gamma(&TestbedProblem::uniform(vec![clone; 4], 1.0, PrimalBase::PlSine).unwrap());
    let quad = gamma(
        &TestbedProblem::uniform(
            vec![
                TestbedClient {
                    a: 1.0,
                    c: 0.0,
                    shift: 1.0,
                },
                TestbedClient {
                    a: 1.0,
                    c: 0.0,
                    shift: -1.0,
                },
            ],
            1.0,
            PrimalBase::Quadratic,
        )
        .unwrap(),
    );
    let mut r = rng::stream(9, &[]);
    let mut min_random = f64::INFINITY;
    for k in 0..100 {
        let n = r.random_range(1..6);
        let shared_c = r.random_range(-2.0..2.0);
        let clients: Vec<TestbedClient> = (0..n)
            .map(|_| TestbedClient {
                a: r.random_range(0.2..2.0),
                c: if k % 2 == 0 {
                    shared_c
                } else {
                    r.random_range(-2.0..2.0)
                },
                shift: if k % 2 == 0 { r.random_range(-1.0..1.0) } else { 0.0 },
            })
            .collect();
        let raw: Vec<f64> = (0..n).map(|_| r.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let p = raw.iter().map(|v| v / total).collect();
        let base = if k % 4 < 2 {
            PrimalBase::PlSine
        } else {
            PrimalBase::Quadratic
        };
        let problem = TestbedProblem::new(clients, p, r.random_range(0.5..2.0), base).unwrap();
        min_random = min_random.min(gamma(&problem));
    }
    Outcome {
        pass: cloned.abs() <= 1e-9 && (quad - 1.0).abs() <= 1e-6 && min_random >= -1e-9,
        detail: format!("clones {cloned:.2e}, two-client quadratic {quad:.9}, min over 100 random {min_random:.3e}"),
    }
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let results = [
        criterion(1, "gradient correctness", Some(secs(5)), gradient_correctness),
        criterion(2, "metric oracle equivalence", Some(secs(30)), metric_oracle),
        criterion(3, "convergence rate", Some(secs(60)), rate_reproduction),
        criterion(4, "fairness improvement", Some(secs(300)), fairness_improvement),
        criterion(5, "heterogeneity trend", None, heterogeneity_trend),
        criterion(6, "reduction identity", None, reduction_identity),
        criterion(7, "train determinism", None, train_determinism),
        criterion(8, "implication probe", None, implication_probe),
        criterion(9, "gamma sanity", None, gamma_sanity),
    ];
    let passed = results.iter().filter(|p| **p).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
