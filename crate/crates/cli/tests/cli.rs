use std::path::Path;
use std::process::{Command, Output};

fn cpic(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpic"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn cpic")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn simulate(dir: &Path) {
    let o = cpic(
        &[
            "simulate-lorenz",
            "--steps",
            "2500",
            "--burn-in",
            "500",
            "--embed-dim",
            "8",
            "--snr",
            "0.1",
            "--out",
            "noisy.csv",
            "--latents-out",
            "latents.csv",
            "--sidecar",
            "sidecar.json",
        ],
        dir,
    );
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn sweep_dry_run_lists_table_snr_labels() {
    let dir = tempfile::tempdir().unwrap();
    let o = cpic(&["sweep-lorenz", "--levels", "10", "--dry-run"], dir.path());
    assert!(o.status.success());
    let labels: Vec<String> = stdout(&o).lines().map(str::to_string).collect();
    assert_eq!(
        labels,
        [
            "0.001", "0.00167", "0.00278", "0.00464", "0.00774", "0.0129", "0.0215", "0.0359",
            "0.0599", "0.1"
        ]
    );
}

#[test]
fn deterministic_encoder_with_compression_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = cpic(
        &[
            "train",
            "--data",
            "x.csv",
            "--encoder",
            "deterministic",
            "--compression",
            "vub",
            "--out",
            "m.json",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("compression term constant"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn unknown_flag_and_bad_enum_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        cpic(&["train", "--bogus"], dir.path()).status.code(),
        Some(2)
    );
    let o = cpic(
        &["train", "--data", "x.csv", "--pi", "cpc", "--out", "m.json"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(
        cpic(&["no-such-command"], dir.path()).status.code(),
        Some(2)
    );
}

#[test]
fn missing_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = cpic(
        &["train", "--data", "absent.csv", "--out", "m.json"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(
        err.contains("absent.csv") && err.lines().count() == 1,
        "{err}"
    );
}

#[test]
fn pipeline_simulate_train_project_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d);
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("sidecar.json")).unwrap()).unwrap();
    assert!((sidecar["achieved_snr"].as_f64().unwrap() - 0.1).abs() < 1e-9);

    let o = cpic(
        &[
            "train",
            "--data",
            "noisy.csv",
            "--steps",
            "40",
            "--batch",
            "16",
            "--out",
            "model.json",
            "--report",
            "report.json",
        ],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["loss"].as_array().unwrap().len(), 40);

    for out in ["p1.csv", "p2.csv"] {
        let o = cpic(
            &[
                "project",
                "--model",
                "model.json",
                "--data",
                "noisy.csv",
                "--out",
                out,
            ],
            d,
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let p1 = std::fs::read(d.join("p1.csv")).unwrap();
    assert_eq!(p1, std::fs::read(d.join("p2.csv")).unwrap());
    assert!(String::from_utf8(p1).unwrap().starts_with("y0,y1,y2\n"));

    let o = cpic(
        &[
            "eval-align",
            "--latents",
            "p1.csv",
            "--truth",
            "latents.csv",
            "--errors-out",
            "err.csv",
        ],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let r2: f64 = stdout(&o)
        .lines()
        .next()
        .unwrap()
        .strip_prefix("r2 ")
        .unwrap()
        .parse()
        .unwrap();
    assert!((0.0..=1.0).contains(&r2));
    let errors = std::fs::read_to_string(d.join("err.csv")).unwrap();
    assert!(errors.starts_with("t,error\n0,"));
    assert_eq!(errors.lines().count(), 2001);

    let o = cpic(
        &[
            "forecast",
            "--latents",
            "p1.csv",
            "--targets",
            "latents.csv",
            "--lag",
            "5",
        ],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.starts_with("fold ")).count(), 5);
    assert!(out.contains("mean_r2 "));
}

#[test]
fn gaussian_training_via_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d);
    let o = cpic(
        &[
            "train",
            "--data",
            "noisy.csv",
            "--pi",
            "gaussian",
            "--encoder",
            "deterministic",
            "--steps",
            "50",
            "--out",
            "dca.json",
        ],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let model: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("dca.json")).unwrap()).unwrap();
    assert_eq!(model["config"]["pi_estimator"], "gaussian");
    assert_eq!(model["encoder"]["deterministic"], true);
    assert_eq!(model["seed"], 0);
}

#[test]
fn mi_selftest_prints_truth_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let o = cpic(
        &[
            "mi-selftest",
            "--rho",
            "0.5",
            "--batch",
            "128",
            "--steps",
            "100",
            "--eval-batches",
            "5",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("truth 0.1438 nats"), "{out}");
    for name in ["infonce", "nwj", "l1out", "vub", "mine", "tuba", "lba"] {
        assert!(
            out.lines().any(|l| l.starts_with(name)),
            "missing {name}: {out}"
        );
    }
    assert!(out.contains("PASS") || out.contains("FAIL"));
}

#[test]
fn pca_sweep_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = cpic(
        &[
            "sweep-lorenz",
            "--levels",
            "2",
            "--seeds",
            "1",
            "--methods",
            "pca",
            "--out",
            "sweep.json",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let rep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sweep.json")).unwrap())
            .unwrap();
    let rows = rep["report"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["method"], "pca");
    assert!(rows[0]["median"].as_f64().unwrap() < rows[1]["median"].as_f64().unwrap());
    assert!(stdout(&o).contains("0.001"));
}
