use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn memip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memip")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = memip(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = path(dir, name);
    fs::write(&p, text).unwrap();
    p
}

fn event_rows(text: &str) -> usize {
    text.lines().filter(|l| !l.starts_with('#') && !l.starts_with("id,")).count()
}

#[test]
fn simulate_is_deterministic_and_poisson_count_matches() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "p.toml",
        "scenario = \"poisson\"\nd = 1\nmu = 1.0\nt_plus = 100.0\nn_realizations = 100\nseed = 7\n",
    );
    let (a, b) = (path(dir.path(), "a.csv"), path(dir.path(), "b.csv"));
    ok(&["simulate", "--config", &cfg, "--out", &a]);
    ok(&["--threads", "1", "simulate", "--config", &cfg, "--out", &b]);
    let (ta, tb) = (fs::read_to_string(&a).unwrap(), fs::read_to_string(&b).unwrap());
    assert_eq!(ta, tb);
    let n = event_rows(&ta) as f64;
    assert!((n - 10_000.0).abs() <= 300.0, "{n} events");

    let c = path(dir.path(), "c.csv");
    ok(&["simulate", "--config", &cfg, "--out", &c, "--seed", "8"]);
    assert_ne!(fs::read_to_string(&c).unwrap(), ta);
}

#[test]
fn toy_simulation_declares_two_types_and_windows() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "t.toml", "scenario = \"toy\"\nd = 2\nt_plus = 20.0\nn_realizations = 5\nseed = 1\n");
    let (ev, truth) = (path(dir.path(), "e.csv"), path(dir.path(), "truth.json"));
    ok(&["simulate", "--config", &cfg, "--out", &ev, "--truth-out", &truth]);
    let text = fs::read_to_string(&ev).unwrap();
    assert!(text.starts_with("#d 2\n"));
    assert_eq!(text.lines().filter(|l| l.starts_with("#window")).count(), 5);
    assert!(text.lines().any(|l| l == "id,time,type"));
    assert!(fs::read_to_string(&truth).unwrap().contains("sin_power_law"));
}

fn simulated_events(dir: &Path) -> String {
    let cfg = write_config(
        dir,
        "s.toml",
        "scenario = \"large\"\nd = 3\np = 0.8\nt_plus = 20.0\nn_realizations = 300\nseed = 2\nmu_range = [0.2, 0.5]\n",
    );
    let ev = path(dir, "events.csv");
    ok(&["simulate", "--config", &cfg, "--out", &ev, "--truth-out", &path(dir, "truth.json")]);
    ev
}

#[test]
fn fit_is_identical_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let ev = simulated_events(dir.path());
    let (one, eight) = (path(dir.path(), "one"), path(dir.path(), "eight"));
    ok(&["--threads", "1", "fit", "--events", &ev, "--out-dir", &one, "--k-max", "3"]);
    ok(&["--threads", "8", "fit", "--events", &ev, "--out-dir", &eight, "--k-max", "3"]);
    for f in ["model.json", "model_k1.json", "model_k2.json", "model_k3.json"] {
        let a = fs::read(Path::new(&one).join(f)).unwrap();
        let b = fs::read(Path::new(&eight).join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(Path::new(&one).join("report.json")).unwrap()).unwrap();
    let per_k = report["per_k"].as_array().unwrap();
    assert_eq!(per_k.len(), 3);
    let objectives: Vec<f64> = per_k.iter().map(|r| r["objective"].as_f64().unwrap()).collect();
    assert!(objectives.windows(2).all(|w| w[1] >= w[0]));
    assert!((1..=3).contains(&report["selected_k"].as_u64().unwrap()));
}

#[test]
fn evaluate_writes_metrics_and_rejects_bad_models() {
    let dir = TempDir::new().unwrap();
    let ev = simulated_events(dir.path());
    let fit_dir = path(dir.path(), "fit");
    ok(&["fit", "--events", &ev, "--out-dir", &fit_dir, "--k-max", "2"]);
    let model = path(dir.path(), "fit/model.json");
    let csv = path(dir.path(), "metrics.csv");
    ok(&["evaluate", "--model", &model, "--events", &ev, "--truth", &path(dir.path(), "truth.json"), "--out", &csv]);
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("metric,value,config_hash,seed\n"));
    let value = |name: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(&format!("{name},"))).unwrap();
        line.split(',').nth(1).unwrap().parse().unwrap()
    };
    assert!((0.0..=2.0).contains(&value("diff")));
    assert!(value("pred").is_finite());

    let bad = write_config(dir.path(), "bad.json", "{\"format\": \"memip-model\", \"version\": 1, \"d\": 3}");
    let out = memip(&["evaluate", "--model", &bad, "--events", &ev]);
    assert_eq!(out.status.code(), Some(2));
    let out = memip(&["evaluate", "--model", &path(dir.path(), "missing.json"), "--events", &ev]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn malformed_inputs_map_to_exit_codes() {
    let dir = TempDir::new().unwrap();
    let bad_events = write_config(dir.path(), "e.csv", "#window a 0 1\nid,time,type\na,2.0,1\n");
    let out = memip(&["fit", "--events", &bad_events, "--out-dir", &path(dir.path(), "o")]);
    assert_eq!(out.status.code(), Some(2));
    let bad_cfg = write_config(dir.path(), "c.toml", "scenario = \"toy\"\nunknown = 3\n");
    let out = memip(&["simulate", "--config", &bad_cfg, "--out", &path(dir.path(), "x.csv")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn approx_reports_coefficients_and_error() {
    let dir = TempDir::new().unwrap();
    let mut table = String::from("t,f\n");
    for i in 0..=400 {
        let t = i as f64 * 0.05;
        table.push_str(&format!("{t},{}\n", (-t).exp() * t.cos()));
    }
    let input = write_config(dir.path(), "f.csv", &table);
    let error_at = |k: &str| -> f64 {
        let out = ok(&["approx", "--input", &input, "--k", k, "--alpha", "0.5"]);
        let text = String::from_utf8(out.stdout).unwrap();
        assert_eq!(text.lines().filter(|l| l.chars().next().is_some_and(|c| c.is_ascii_digit())).count(), k.parse::<usize>().unwrap() + 1);
        text.lines().next().unwrap().trim_start_matches("# sup_norm_error ").parse().unwrap()
    };
    assert!(error_at("12") < error_at("4"));
    let out = memip(&["approx", "--input", &input, "--k", "0", "--alpha", "0.5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn reproduce_writes_a_bundle() {
    let dir = TempDir::new().unwrap();
    let out = path(dir.path(), "bundle");
    ok(&[
        "reproduce", "--scenario", "toy", "--out-dir", &out, "--seeds", "1", "--n-train", "200", "--n-test", "100", "--k-max", "2",
        "--alphas", "1",
    ]);
    for f in ["metrics.csv", "table.csv", "kernel_integrals.csv", "summary.json"] {
        assert!(Path::new(&out).join(f).exists(), "{f} missing");
    }
    let metrics = fs::read_to_string(Path::new(&out).join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
}
