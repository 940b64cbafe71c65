use std::path::Path;
use std::process::{Command, Output};

fn ffalm(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ffalm"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn train_with_zero_rounds_writes_one_row() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ffalm(&["train", "--rounds", "0", "--out", "out"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(tmp.path().join("out/metrics_fedavg_seed0.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "round,algorithm,seed,eta_w,eta_lambda,lambda,train_loss,acc,dpd,eod"
    );
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("0,fedavg,0,"));
    assert!(tmp.path().join("out/model_fedavg_seed0.bin").exists());
}

#[test]
fn train_outputs_reload() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ffalm(
        &[
            "train",
            "--algorithm",
            "fpfl",
            "--seed",
            "3",
            "--rounds",
            "4",
            "--out",
            "o",
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("fpfl seed 3: round 4"));
    let rows = ffalm::io::read_metrics_csv(&tmp.path().join("o/metrics_fpfl_seed3.csv")).unwrap();
    assert_eq!(rows.len(), 5);
    let params = ffalm::io::read_checkpoint(&tmp.path().join("o/model_fpfl_seed3.bin")).unwrap();
    assert_eq!(params.arch(), ffalm::Architecture::Linear { dim: 10 });
}

#[test]
fn compare_writes_one_row_per_algorithm() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ffalm(
        &[
            "compare",
            "--algorithms",
            "fedavg,ffalm",
            "--seeds",
            "2",
            "--rounds",
            "5",
            "--out",
            "c",
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(tmp.path().join("c/comparison.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("fedavg,2,") && rows[1].starts_with("ffalm,2,"));
    for cell in rows.iter().flat_map(|r| r.split(',').skip(2)) {
        let v: f64 = cell.parse().unwrap();
        assert!((0.0..=100.0).contains(&v));
    }
    let text = std::fs::read_to_string(tmp.path().join("c/comparison.txt")).unwrap();
    assert!(stdout(&o).ends_with(&text));
    for name in ["fedavg_seed0", "fedavg_seed1", "ffalm_seed0", "ffalm_seed1"] {
        assert!(tmp.path().join(format!("c/metrics_{name}.csv")).exists());
    }
}

#[test]
fn rate_check_passes_with_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ffalm(&["rate-check", "--out", "gaps.csv"], tmp.path());
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).trim_end().ends_with("PASS"));
    let csv = std::fs::read_to_string(tmp.path().join("gaps.csv")).unwrap();
    assert!(csv.starts_with("t,gap_mean,gap_std,repetitions\n"));
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn rate_check_fails_outside_window() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ffalm(
        &[
            "rate-check",
            "--repetitions",
            "2",
            "--min-slope",
            "-0.2",
            "--max-slope",
            "-0.1",
        ],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).trim_end().ends_with("FAIL"));
}

#[test]
fn partition_writes_plan_and_data() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("p.cfg");
    std::fs::write(&cfg, "clients = 3\nn_samples = 300\nalpha = 1.0\n").unwrap();
    let o = ffalm(
        &[
            "partition",
            "--config",
            "p.cfg",
            "--out",
            "plan.txt",
            "--data-out",
            "train.csv",
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let plan = ffalm::PartitionPlan::from_text(&std::fs::read_to_string(tmp.path().join("plan.txt")).unwrap()).unwrap();
    let train = ffalm::io::load_csv_dataset(&tmp.path().join("train.csv")).unwrap();
    assert_eq!(plan.n_clients(), 3);
    assert_eq!(train.len(), 240);
    plan.validate_against(train.len()).unwrap();
}

#[test]
fn config_errors_name_key_and_line() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.cfg"), "rounds = 5\n\nlerning_rate = 0.1\n").unwrap();
    let o = ffalm(&["train", "--config", "bad.cfg", "--out", "o"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("bad.cfg:3") && err.contains("lerning_rate"), "{err}");
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn failed_run_removes_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    // The checkpoint path is a directory, so the second write of the run fails.
    std::fs::create_dir_all(tmp.path().join("o/model_fedavg_seed0.bin")).unwrap();
    let o = ffalm(&["train", "--rounds", "1", "--out", "o"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("model_fedavg_seed0.bin"));
    assert!(!tmp.path().join("o/metrics_fedavg_seed0.csv").exists());
}

#[test]
fn gradcheck_and_probe_report_verdicts() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ffalm(&["gradcheck", "--instances", "10"], tmp.path());
    assert!(o.status.success());
    assert!(stdout(&o).trim_end().ends_with("PASS"));

    let o = ffalm(&["probe", "--trials", "50"], tmp.path());
    assert!(o.status.success());
    assert!(stdout(&o).contains("EO holds"));

    let o = ffalm(&["probe", "--table", "0.1,0.1,0.15,0.15,0.1,0.1,0.15,0.15"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("dpd 0.000000"), "{out}");
    assert_eq!(out.lines().count(), 10);

    let o = ffalm(&["probe", "--table", "0.5,0.5"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unknown_algorithm_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ffalm(&["train", "--algorithm", "fedprox"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}
