use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml")
}

fn run(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_debiaskf"));
    cmd.args(args).env_remove("DEBIASKF_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

/// `(filter, step, metric, id) -> (value, bounds)` from a metrics file.
fn metrics(dir: &Path) -> Vec<(String, usize, String, String, f64, Option<(f64, f64)>)> {
    let text = fs::read_to_string(dir.join("metrics.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# debiaskf-metrics v1"));
    lines
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bounds = (!f[5].is_empty()).then(|| (f[5].parse().unwrap(), f[6].parse().unwrap()));
            (f[0].to_string(), f[1].parse().unwrap(), f[2].to_string(), f[3].to_string(), f[4].parse().unwrap(), bounds)
        })
        .collect()
}

#[test]
fn simulate_writes_manifest_and_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_path();
    let out = run(&["simulate", "--config", cfg.to_str().unwrap(), "--mc-runs", "2", "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["truth.csv", "measurements.csv", "bias.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let m = manifest(dir.path());
    let hash = hex::encode(Sha256::digest(fs::read(&cfg).unwrap()));
    assert_eq!(m["config_sha256"], hash);
    assert_eq!(m["seed"], 0);
    assert_eq!(m["command"], "simulate");
    let truth = fs::read_to_string(dir.path().join("truth.csv")).unwrap();
    // 2 runs × 101 steps × 3 targets plus the two header lines
    assert_eq!(truth.lines().count(), 2 * 101 * 3 + 2);
}

#[test]
fn simulate_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let out = run(&["simulate", "--seed", "9", "--mc-runs", "3", "--out", d.path().to_str().unwrap()], &[]);
        assert_eq!(code(&out), 0);
    }
    for f in ["truth.csv", "measurements.csv", "bias.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let other = tempfile::tempdir().unwrap();
    run(&["simulate", "--seed", "10", "--mc-runs", "3", "--out", other.path().to_str().unwrap()], &[]);
    assert_ne!(fs::read(a.path().join("bias.csv")).unwrap(), fs::read(other.path().join("bias.csv")).unwrap());
}

#[test]
fn config_errors_exit_2_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(config_path()).unwrap();
    let start = text.find("[geometry]").unwrap();
    let end = text.find("[[targets]]").unwrap();
    let no_geometry = dir.path().join("no_geometry.toml");
    fs::write(&no_geometry, format!("{}{}", &text[..start], &text[end..])).unwrap();
    let out = run(&["simulate", "--config", no_geometry.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line") && err.contains("geometry"), "{err}");

    let typo = dir.path().join("typo.toml");
    fs::write(&typo, format!("{text}\nsigma_rnage = 3.0\n")).unwrap();
    let out = run(&["simulate", "--config", typo.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("sigma_rnage"));
}

#[test]
fn unknown_filter_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["compare", "--filters", "decoupled,kalman", "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(code(&out), 2);
}

#[test]
fn shared_linearization_metrics_agree() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["compare", "--filters", "decoupled,askf", "--shared-linearization", "--mc-runs", "4", "--out", dir.path().to_str().unwrap()],
        &[],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = metrics(dir.path());
    let askf: Vec<_> = rows.iter().filter(|r| r.0 == "askf").collect();
    let dec: Vec<_> = rows.iter().filter(|r| r.0 == "decoupled").collect();
    assert_eq!(askf.len(), dec.len());
    assert!(!askf.is_empty());
    for (a, d) in askf.iter().zip(&dec) {
        assert_eq!((a.1, &a.2, &a.3), (d.1, &d.2, &d.3));
        assert!((a.4 - d.4).abs() <= 1e-6 * d.4.abs().max(1.0), "{:?} vs {:?}", a, d);
    }
    assert_eq!(manifest(dir.path())["filters"], serde_json::json!(["decoupled", "askf"]));
}

#[test]
fn approx_nees_mostly_outside_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["compare", "--filters", "approx", "--mc-runs", "20", "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(code(&out), 0);
    let rows = metrics(dir.path());
    let nees: Vec<_> = rows.iter().filter(|r| r.2 == "nees_location" && r.1 > 10).collect();
    let inside = nees.iter().filter(|r| r.5.is_some_and(|(lo, hi)| (lo..=hi).contains(&r.4))).count();
    assert!(inside * 2 < nees.len(), "{inside} of {} inside", nees.len());
}

#[test]
fn thread_cap_does_not_change_results() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for (d, threads) in [(&a, "1"), (&b, "4")] {
        let out = run(&["compare", "--filters", "decoupled", "--mc-runs", "4", "--seed", "5", "--out", d.path().to_str().unwrap()], &[("DEBIASKF_THREADS", threads)]);
        assert_eq!(code(&out), 0);
    }
    for f in ["metrics.csv", "estimates.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let out = run(&["equivalence", "--n-cases", "1", "--out", a.path().to_str().unwrap()], &[("DEBIASKF_THREADS", "0")]);
    assert_eq!(code(&out), 2);
}

#[test]
fn equivalence_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = run(&["equivalence", "--out", d], &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("equivalence.json")).unwrap()).unwrap();
    assert_eq!(report["cases"].as_array().unwrap().len(), 20);
    assert!(report["max_deviation"].as_f64().unwrap() < 1e-8);

    let out = run(&["equivalence", "--perturb-tb", "0.9", "--out", d], &[]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("max_deviation"));

    let out = run(&["equivalence", "--n-cases", "0", "--out", d], &[]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}

#[test]
fn bench_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = run(&["bench", "--n-list", "1,2,3", "--shape", "2,1,2", "--steps", "2", "--out", d], &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2 + 6);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("bench.json")).unwrap()).unwrap();
    assert_eq!(json["slopes"].as_array().unwrap().len(), 2);

    let out = run(&["bench", "--shape", "6,5", "--out", d], &[]);
    assert_eq!(code(&out), 2);
    let out = run(&["bench", "--n-list", "2,4", "--out", d], &[]);
    assert_eq!(code(&out), 2);
}
