//! `ar1ph` command line: `passage`, `stop`, `simulate` and `validate`.
//!
//! Exit codes: 0 success, 1 validation-suite failure, 2 invalid input,
//! 3 numerical failure, 4 verification failure (the solution is still
//! written, marked unverified).

pub mod config;

use crate::error::Error;
use crate::exec::ExecPolicy;
use crate::montecarlo::{overshoot_report, simulate, Estimate, McConfig};
use crate::passage::ResidueSystem;
use crate::stopping::{
    solve_threshold_exp_identity, solve_threshold_general, verify_solution, GridSpec, StoppingSolution, VERIFY_TOL,
};
use crate::suite::{run_suite, SuiteOptions};
use crate::NegativePart;
use clap::{Args, Parser, Subcommand};
use config::{Format, RunConfig};
use serde::{Deserialize, Serialize};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Debug, Parser)]
#[command(
    name = "ar1ph",
    version,
    about = "Threshold crossings of AR(1) processes with phase-type innovations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Crossing transform Φ(x) on a grid of start points.
    Passage(IoArgs),
    /// Optimal threshold, verification and value curve.
    Stop {
        #[command(flatten)]
        io: IoArgs,
        /// Evaluate this threshold instead of the optimal one.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Monte-Carlo estimates of the crossing quantities.
    Simulate {
        #[command(flatten)]
        io: IoArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        paths: Option<usize>,
    },
    /// Identity checks; exit 0 iff all pass.
    Validate {
        #[command(flatten)]
        io: IoArgs,
        /// Run a single check.
        #[arg(long)]
        only: Option<String>,
        /// Replace every check's tolerance.
        #[arg(long)]
        tolerance: Option<f64>,
    },
}

#[derive(Debug, Args)]
pub struct IoArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long)]
    pub threads: Option<usize>,
}

/// A failed command with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_validation() { 2 } else { 3 },
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli.command) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn execute(cmd: &Command) -> Result<i32, Failure> {
    match cmd {
        Command::Passage(io) => {
            let cfg = load_config(io)?;
            let (format, out) = output_target(io, &cfg);
            let report = cmd_passage(&cfg, policy(io))?;
            emit(out.as_deref(), &report.render(format))?;
            Ok(0)
        }
        Command::Stop { io, threshold } => {
            let cfg = load_config(io)?;
            let (format, out) = output_target(io, &cfg);
            let report = cmd_stop(&cfg, *threshold, policy(io))?;
            emit(out.as_deref(), &report.render(format))?;
            eprint!("{}", report.summary());
            Ok(if report.verified { 0 } else { 4 })
        }
        Command::Simulate { io, seed, paths } => {
            let cfg = load_config(io)?;
            let (format, out) = output_target(io, &cfg);
            let report = cmd_simulate(&cfg, *seed, *paths, policy(io))?;
            for w in report.runs.iter().flat_map(|r| &r.warnings) {
                eprintln!("warning: {w}");
            }
            emit(out.as_deref(), &report.render(format))?;
            Ok(0)
        }
        Command::Validate { io, only, tolerance } => {
            let cfg = match &io.config {
                Some(_) => Some(load_config(io)?),
                None => None,
            };
            let report = cmd_validate(cfg.as_ref(), only.clone(), *tolerance)?;
            print!("{}", report.listing());
            if let Some(out) = &io.out {
                emit(Some(out), &report.render(io.format.unwrap_or(Format::Csv)))?;
            }
            Ok(if report.all_passed() { 0 } else { 1 })
        }
    }
}

fn policy(io: &IoArgs) -> ExecPolicy {
    ExecPolicy::from_workers(io.threads)
}

fn load_config(io: &IoArgs) -> Result<RunConfig, Failure> {
    let path = io.config.as_ref().ok_or_else(|| usage("--config PATH is required"))?;
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("reading {}: {e}", path.display())))?;
    Ok(RunConfig::from_json(&text)?)
}

fn output_target(io: &IoArgs, cfg: &RunConfig) -> (Format, Option<PathBuf>) {
    let out_cfg = cfg.output.as_ref();
    let format = io
        .format
        .or_else(|| out_cfg.and_then(|o| o.format))
        .unwrap_or(Format::Csv);
    let path = io.out.clone().or_else(|| out_cfg.and_then(|o| o.path.clone()));
    (format, path)
}

/// Write to `path` through a temporary file in the same directory, or to
/// stdout when no path is given.
fn emit(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    let io_err = |e: std::io::Error| Failure {
        code: 3,
        message: format!("writing output: {e}"),
    };
    match path {
        None => std::io::stdout().write_all(text.as_bytes()).map_err(io_err),
        Some(p) => {
            let dir = match p.parent() {
                Some(d) if !d.as_os_str().is_empty() => d,
                _ => Path::new("."),
            };
            let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
            tmp.write_all(text.as_bytes()).map_err(io_err)?;
            tmp.as_file().sync_all().map_err(io_err)?;
            tmp.persist(p).map_err(|e| io_err(e.error))?;
            Ok(())
        }
    }
}

/// Full-precision number for CSV output.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_row(cells: &[String]) -> String {
    let mut line = cells.join(",");
    line.push('\n');
    line
}

fn json(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

// passage

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassageRow {
    pub x: f64,
    pub phi: Vec<f64>,
    pub laplace_tau: f64,
    pub error_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassageReport {
    pub b: f64,
    pub rows: Vec<PassageRow>,
}

impl PassageReport {
    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => json(self),
            Format::Csv => {
                let m = self.rows.first().map_or(0, |r| r.phi.len());
                let mut head = vec!["# x".to_string()];
                head.extend((1..=m).map(|i| format!("phi_{i}")));
                head.extend(["laplace_tau".into(), "error_bound".into()]);
                let mut s = csv_row(&head);
                for r in &self.rows {
                    let mut cells = vec![num(r.x)];
                    cells.extend(r.phi.iter().map(|&p| num(p)));
                    cells.extend([num(r.laplace_tau), num(r.error_bound)]);
                    s += &csv_row(&cells);
                }
                s
            }
        }
    }
}

pub fn cmd_passage(cfg: &RunConfig, policy: ExecPolicy) -> Result<PassageReport, Failure> {
    let problem = cfg.problem()?;
    let xs = problem.xs()?;
    let engine = cfg.engine()?;
    let sys = ResidueSystem::build(&engine, problem.b)?;
    let rows = sys
        .solve_grid(&xs, policy)?
        .into_iter()
        .map(|t| PassageRow {
            x: t.x,
            laplace_tau: t.total(),
            phi: t.phi_vec,
            error_bound: t.error_bound,
        })
        .collect();
    Ok(PassageReport { b: problem.b, rows })
}

// stop

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub v: f64,
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationSummary {
    pub dominance_margin: f64,
    pub dominance_at: f64,
    pub excessive_margin: f64,
    pub excessive_at: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopReport {
    pub b_star: f64,
    /// True when `b_star` came from `--threshold` rather than optimization.
    pub override_threshold: bool,
    pub fit_residual: f64,
    pub candidates: Vec<f64>,
    pub maximizer: Option<f64>,
    pub methods_agree: bool,
    pub verified: bool,
    pub verification: VerificationSummary,
    pub curve: Vec<CurvePoint>,
}

impl StopReport {
    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => json(self),
            Format::Csv => {
                let mut s = csv_row(&["# x".into(), "v".into(), "g".into()]);
                for p in &self.curve {
                    s += &csv_row(&[num(p.x), num(p.v), num(p.g)]);
                }
                s
            }
        }
    }

    pub fn summary(&self) -> String {
        let v = &self.verification;
        let mut s = String::new();
        let label = if self.override_threshold { "b (override)" } else { "b*" };
        let _ = writeln!(s, "{label} = {}", num(self.b_star));
        let _ = writeln!(s, "fit residual = {:.3e}", self.fit_residual);
        if let Some(m) = self.maximizer {
            let _ = writeln!(s, "maximizer = {} (methods agree: {})", num(m), self.methods_agree);
        }
        if self.candidates.len() > 1 {
            let _ = writeln!(s, "fit roots = {:?}", self.candidates);
        }
        let _ = writeln!(
            s,
            "dominance margin = {:.3e} at x = {:.6}; excessivity margin = {:.3e} at x = {:.6}",
            v.dominance_margin, v.dominance_at, v.excessive_margin, v.excessive_at
        );
        let _ = writeln!(s, "{}", if self.verified { "verified" } else { "UNVERIFIED" });
        s
    }
}

pub fn cmd_stop(cfg: &RunConfig, threshold: Option<f64>, policy: ExecPolicy) -> Result<StopReport, Failure> {
    let stop = cfg.stop.unwrap_or(config::StopConfig {
        threshold: None,
        window: None,
        curve: None,
    });
    let threshold = threshold.or(stop.threshold);
    let gain = cfg.gain();
    let engine = Arc::new(cfg.engine()?);
    let model = engine.model();
    let exp_identity = model.dim() == 1
        && *model.t_part() == NegativePart::Zero
        && matches!(gain, crate::GainFunction::Identity)
        && stop.window.is_none();
    let sol: StoppingSolution = match threshold {
        Some(b) => StoppingSolution::candidate(engine.clone(), gain, b)?,
        None if exp_identity => {
            let mu = model.spectral().mu()[0].re;
            solve_threshold_exp_identity(mu, model.rho(), model.lambda(), 1e-12)?
        }
        None => {
            let [lo, hi] = stop.window.unwrap_or([0.0, 4.0]);
            solve_threshold_general(engine.clone(), gain, (lo, hi))?
        }
    };
    let tol = cfg.tolerances().verify.unwrap_or(VERIFY_TOL);
    let grid = GridSpec {
        policy,
        ..GridSpec::default()
    };
    let rep = verify_solution(&sol, &grid)?;
    let xs = stop.curve.unwrap_or_default().grid(sol.b_star)?;
    let curve = sol
        .value_curve(&xs)?
        .into_iter()
        .map(|(x, v, g)| CurvePoint { x, v, g })
        .collect();
    Ok(StopReport {
        b_star: sol.b_star,
        override_threshold: threshold.is_some(),
        fit_residual: sol.fit_residual,
        candidates: sol.candidates.clone(),
        maximizer: sol.maximizer,
        methods_agree: sol.methods_agree,
        verified: rep.passed(tol),
        verification: VerificationSummary {
            dominance_margin: rep.dominance_margin,
            dominance_at: rep.dominance_at,
            excessive_margin: rep.excessive_margin,
            excessive_at: rep.excessive_at,
            tolerance: tol,
        },
        curve,
    })
}

// simulate

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateOut {
    pub mean: f64,
    pub stderr: f64,
}

impl From<Estimate> for EstimateOut {
    fn from(e: Estimate) -> Self {
        Self {
            mean: e.mean,
            stderr: e.stderr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    /// One-based phase.
    pub phase: usize,
    pub phi: EstimateOut,
    pub crossings: usize,
    pub ks: f64,
    pub ks_critical: f64,
    pub correlation: f64,
    pub correlation_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRun {
    pub x: f64,
    pub phases: Vec<PhaseStats>,
    pub tau_transform: EstimateOut,
    pub joint: EstimateOut,
    pub factorization_residual: EstimateOut,
    pub censored_fraction: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub b: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub max_steps: u64,
    pub runs: Vec<SimulationRun>,
}

impl SimulateReport {
    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => json(self),
            Format::Csv => {
                let nan = f64::NAN;
                let mut s = csv_row(&["# x", "statistic", "phase", "value", "stderr", "bound"].map(String::from));
                for r in &self.runs {
                    let mut row = |stat: &str, phase: usize, v: f64, se: f64, bound: f64| {
                        s += &csv_row(&[num(r.x), stat.into(), phase.to_string(), num(v), num(se), num(bound)]);
                    };
                    for p in &r.phases {
                        row("phi", p.phase, p.phi.mean, p.phi.stderr, nan);
                        row("crossings", p.phase, p.crossings as f64, nan, nan);
                        row("ks", p.phase, p.ks, nan, p.ks_critical);
                        row("correlation", p.phase, p.correlation, nan, p.correlation_bound);
                    }
                    row("tau_transform", 0, r.tau_transform.mean, r.tau_transform.stderr, nan);
                    row("joint", 0, r.joint.mean, r.joint.stderr, nan);
                    row(
                        "factorization_residual",
                        0,
                        r.factorization_residual.mean,
                        r.factorization_residual.stderr,
                        nan,
                    );
                    row("censored_fraction", 0, r.censored_fraction, nan, nan);
                }
                s
            }
        }
    }
}

pub fn cmd_simulate(
    cfg: &RunConfig,
    seed: Option<u64>,
    paths: Option<usize>,
    policy: ExecPolicy,
) -> Result<SimulateReport, Failure> {
    let problem = cfg.problem()?;
    let xs = problem.xs()?;
    let block = cfg.mc;
    let n_paths = paths
        .or(block.map(|m| m.n_paths))
        .ok_or_else(|| usage("simulate needs an mc block or --paths"))?;
    let seed = seed.or(block.map(|m| m.seed)).unwrap_or(0);
    let model = cfg.ar1_model()?;
    let gain = cfg.gain();
    let mc = McConfig {
        n_paths,
        seed,
        max_steps: block.and_then(|m| m.max_steps),
        policy,
    };
    let mut runs = Vec::with_capacity(xs.len());
    let mut max_steps = 0;
    for &x in &xs {
        let sum = simulate(&model, x, problem.b, &gain, &mc, true)?;
        max_steps = sum.max_steps;
        let rep = overshoot_report(&model, sum.records.as_deref().unwrap_or(&[]))?;
        let phases = sum
            .phi
            .iter()
            .zip(&rep.groups)
            .map(|(e, g)| PhaseStats {
                phase: g.phase + 1,
                phi: (*e).into(),
                crossings: g.overshoots.len(),
                ks: g.ks,
                ks_critical: g.ks_critical,
                correlation: g.correlation,
                correlation_bound: g.correlation_bound,
            })
            .collect();
        runs.push(SimulationRun {
            x,
            phases,
            tau_transform: sum.tau_transform.into(),
            joint: sum.joint.into(),
            factorization_residual: sum.factorization_residual.into(),
            censored_fraction: sum.censored_fraction(),
            warnings: rep.warnings,
        });
    }
    Ok(SimulateReport {
        b: problem.b,
        n_paths,
        seed,
        max_steps,
        runs,
    })
}

// validate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckLine {
    pub check: String,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateReport {
    pub checks: Vec<CheckLine>,
}

impl ValidateReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.check.as_str())
            .collect()
    }

    /// One line per check, then a failure list if any.
    pub fn listing(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{} {:<15} residual {:.3e}  tol {:.1e}  {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.check,
                c.residual,
                c.tolerance,
                c.detail
            );
        }
        let failing = self.failing();
        if !failing.is_empty() {
            let _ = writeln!(s, "failed: {}", failing.join(", "));
        }
        s
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => json(self),
            Format::Csv => {
                let mut s = csv_row(&["# check", "residual", "tolerance", "passed"].map(String::from));
                for c in &self.checks {
                    s += &csv_row(&[c.check.clone(), num(c.residual), num(c.tolerance), c.passed.to_string()]);
                }
                s
            }
        }
    }
}

pub fn cmd_validate(
    cfg: Option<&RunConfig>,
    only: Option<String>,
    tolerance: Option<f64>,
) -> Result<ValidateReport, Failure> {
    let opts = SuiteOptions {
        model: cfg.map(RunConfig::ar1_model).transpose()?,
        tol_override: tolerance.or(cfg.and_then(|c| c.tolerances().validate)),
        only,
    };
    let checks = run_suite(&opts)?
        .into_iter()
        .map(|r| CheckLine {
            check: r.name.to_string(),
            residual: r.residual,
            tolerance: r.tol,
            passed: r.passed(),
            detail: r.detail,
        })
        .collect();
    Ok(ValidateReport { checks })
}
