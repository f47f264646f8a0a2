use ar1ph::cli::{PassageReport, SimulateReport, StopReport};
use ar1ph::passage::closed_form_exp;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ar1ph"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn exp_config() -> String {
    configs().join("exponential.json").to_str().unwrap().to_string()
}

fn two_phase_config() -> String {
    configs().join("two_phase.json").to_str().unwrap().to_string()
}

#[test]
fn passage_exponential_grid_matches_closed_form() {
    let out = run(&["passage", "--config", &exp_config()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "# x,phi_1,laplace_tau,error_bound");
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 7);
    for r in &rows {
        let cf = closed_form_exp(r[0], 1.0, 1.0, 0.5, 0.5).unwrap();
        assert!((r[1] - cf).abs() < 1e-10, "x = {}: {} vs {cf}", r[0], r[1]);
    }
    assert!(!text.contains('\r'));
}

#[test]
fn passage_rejects_start_above_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.json",
        r#"{"model": {"lambda": 0.5, "rho": 0.5, "q": [-1], "alpha": [1]},
            "problem": {"b": 1, "x": [0, 1.5]}}"#,
    );
    let out_path = dir.path().join("out.csv");
    let out = run(&["passage", "--config", &cfg, "--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_path.exists(), "no partial output on failure");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "typo.json",
        r#"{"model": {"lambda": 0.5, "rho": 0.5, "q": [-1], "alpha": [1], "lamda": 1},
            "problem": {"b": 1, "x": 0}}"#,
    );
    assert_eq!(run(&["passage", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn passage_json_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    let out = run(&[
        "passage",
        "--config",
        &two_phase_config(),
        "--format",
        "json",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    let report: PassageReport = serde_json::from_str(&text).unwrap();
    assert_eq!(report.rows.len(), 4);
    assert_eq!(serde_json::to_string_pretty(&report).unwrap() + "\n", text);
}

fn stop_report(args: &[&str]) -> (StopReport, Option<i32>) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stop.json");
    let mut full = vec!["stop", "--format", "json", "--out", path.to_str().unwrap()];
    full.extend_from_slice(args);
    let out = run(&full);
    let text = std::fs::read_to_string(&path).expect("report written");
    (serde_json::from_str(&text).unwrap(), out.status.code())
}

#[test]
fn stop_curve_reproduces_figure_family() {
    let (rep, code) = stop_report(&["--config", &exp_config()]);
    assert_eq!(code, Some(0));
    assert!((rep.b_star - 0.696_223_167_177_806_5).abs() < 1e-9);
    assert!(rep.verified && rep.methods_agree);
    let k = rep
        .curve
        .iter()
        .position(|p| p.x == rep.b_star)
        .expect("b* on the grid");
    for p in &rep.curve {
        assert!(p.v >= p.g - 1e-9, "v < g at {}", p.x);
        if p.x >= rep.b_star {
            assert_eq!(p.v, p.x);
        }
    }
    let h = rep.curve[k].x - rep.curve[k - 1].x;
    assert!((rep.curve[k - 1].v - rep.curve[k].v).abs() < 2.0 * h, "jump at b*");
}

#[test]
fn non_optimal_threshold_shows_kink() {
    let (rep, code) = stop_report(&["--config", &exp_config(), "--threshold", "1.2"]);
    assert!(rep.override_threshold);
    assert_eq!(rep.verified, code == Some(0));
    let k = rep.curve.iter().position(|p| p.x == 1.2).unwrap();
    let c = &rep.curve;
    let left = (c[k].v - c[k - 1].v) / (c[k].x - c[k - 1].x);
    let right = (c[k + 1].v - c[k].v) / (c[k + 1].x - c[k].x);
    assert!((left - right).abs() > 0.01, "slopes {left} and {right}");
}

#[test]
fn stop_csv_has_single_header() {
    let out = run(&["stop", "--config", &exp_config()]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with('#')).count(), 1);
    assert!(text.starts_with("# x,v,g\n"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("verified"));
}

#[test]
fn simulate_is_reproducible_and_matches_passage() {
    let cfg = two_phase_config();
    let a = run(&["simulate", "--config", &cfg, "--format", "json"]);
    let b = run(&["simulate", "--config", &cfg, "--format", "json"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let sim: SimulateReport = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(sim.n_paths, 100_000);
    let p = run(&["passage", "--config", &cfg, "--format", "json"]);
    let pass: PassageReport = serde_json::from_slice(&p.stdout).unwrap();
    for (run, row) in sim.runs.iter().zip(&pass.rows) {
        assert_eq!(run.x, row.x);
        for (ph, exact) in run.phases.iter().zip(&row.phi) {
            assert!(
                (ph.phi.mean - exact).abs() <= 3.0 * ph.phi.stderr,
                "x = {}, phase {}: {} ± {} vs {exact}",
                run.x,
                ph.phase,
                ph.phi.mean,
                ph.phi.stderr
            );
        }
    }
}

#[test]
fn simulate_censoring_is_negligible_at_half() {
    let out = run(&[
        "simulate",
        "--config",
        &exp_config(),
        "--paths",
        "20000",
        "--seed",
        "3",
        "--format",
        "json",
    ]);
    let sim: SimulateReport = serde_json::from_slice(&out.stdout).unwrap();
    for r in &sim.runs {
        assert!(r.censored_fraction <= 1e-6, "{}", r.censored_fraction);
    }
    assert_eq!(sim.seed, 3);
}

#[test]
fn validate_default_passes() {
    let out = run(&["validate"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 8);
}

#[test]
fn validate_tampered_tolerance_lists_failures() {
    let out = run(&["validate", "--tolerance", "1e-30"]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("FAIL"));
    assert!(text.lines().last().unwrap().starts_with("failed: "));
}

#[test]
fn validate_only_runs_one_check() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.csv");
    let out = run(&["validate", "--only", "qbinomial", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(path).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().starts_with("qbinomial,"));
    assert_eq!(run(&["validate", "--only", "bogus"]).status.code(), Some(2));
}

#[test]
fn missing_config_is_usage_error() {
    assert_eq!(run(&["passage"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}
