//! Simulation oracle for threshold crossings.
//!
//! Each innovation `S_n` is drawn as a full trajectory of the absorbing
//! chain. On the crossing step the level is passed at elapsed chain time
//! `u* = b - λX_{n-1} + T_n`, and the phase occupied at `u*` is the crossing
//! phase. Path `k` draws from ChaCha8 stream `k` of the run seed, and blocks
//! of paths are merged in index order, so estimates do not depend on the
//! number of workers.

mod stats;

pub use stats::{correlation, ks_critical_1pct, ks_statistic, Moments};

use crate::error::{Error, Result};
use crate::exec::ExecPolicy;
use crate::passage::overshoot_expectation;
use crate::phasetype::phase_at;
use crate::stopping::GainFunction;
use crate::transforms::Ar1Model;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Paths per block.
pub const BLOCK: usize = 4096;
/// Censoring tolerance on `ρ^{max_steps}`.
pub const CENSOR_TOL: f64 = 1e-12;
/// Fewer crossings than this in a phase group triggers a warning.
pub const MIN_GROUP: usize = 1000;

/// One simulated path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    /// `None` when censored at `max_steps`.
    pub tau: Option<u64>,
    /// `X_τ`; NaN when censored.
    pub x_tau: f64,
    /// `X_τ - b`; NaN when censored.
    pub overshoot: f64,
    /// Zero-based phase at crossing; `None` when censored or `τ = 0`.
    pub crossing_phase: Option<usize>,
    /// `ρ^τ g(X_τ)`, 0 when censored.
    pub discounted_payoff: f64,
}

/// Sample mean with standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: u64,
    pub censored_fraction: f64,
}

impl Estimate {
    fn from_moments(m: &Moments, censored: u64) -> Self {
        Self {
            mean: m.mean,
            stderr: m.stderr(),
            n: m.n,
            censored_fraction: if m.n == 0 { 0.0 } else { censored as f64 / m.n as f64 },
        }
    }

    /// `|mean - value| ≤ k · stderr`.
    pub fn within(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.stderr
    }
}

/// Smallest `n` with `ρ^n < 1e-12`.
pub fn default_max_steps(rho: f64) -> u64 {
    (CENSOR_TOL.ln() / rho.ln()).floor() as u64 + 1
}

/// Run parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    pub n_paths: usize,
    pub seed: u64,
    pub max_steps: Option<u64>,
    pub policy: ExecPolicy,
}

impl McConfig {
    pub fn new(n_paths: usize, seed: u64) -> Self {
        Self {
            n_paths,
            seed,
            max_steps: None,
            policy: ExecPolicy::Parallel,
        }
    }

    pub fn with_policy(mut self, policy: ExecPolicy) -> Self {
        self.policy = policy;
        self
    }
}

fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn simulate_path(
    model: &Ar1Model,
    x: f64,
    b: f64,
    gain: &GainFunction,
    max_steps: u64,
    rng: &mut ChaCha8Rng,
    holding: &mut Vec<(usize, f64)>,
) -> Result<PathRecord> {
    if x >= b {
        return Ok(PathRecord {
            tau: Some(0),
            x_tau: x,
            overshoot: x - b,
            crossing_phase: None,
            discounted_payoff: gain.eval(x),
        });
    }
    let (lambda, rho) = (model.lambda(), model.rho());
    let s_part = model.s_part();
    let t_part = model.t_part();
    let mut prev = x;
    let mut discount = 1.0;
    for n in 1..=max_steps {
        discount *= rho;
        let s = s_part.sample_into(rng, holding);
        let t = t_part.sample(rng);
        let next = lambda * prev + s - t;
        if next >= b {
            let u_star = b - lambda * prev + t;
            if !(u_star >= 0.0) {
                return Err(Error::Embedding(format!(
                    "crossing level u* = {u_star} < 0 at step {n}; the embedding needs b - λX_(n-1) + T_n ≥ 0 (b = {b})"
                )));
            }
            let phase = phase_at(holding, u_star)
                .ok_or_else(|| Error::Embedding(format!("u* = {u_star} is not below S_n = {s} at step {n}")))?;
            return Ok(PathRecord {
                tau: Some(n),
                x_tau: next,
                overshoot: next - b,
                crossing_phase: Some(phase),
                discounted_payoff: discount * gain.eval(next),
            });
        }
        prev = next;
    }
    Ok(PathRecord {
        tau: None,
        x_tau: f64::NAN,
        overshoot: f64::NAN,
        crossing_phase: None,
        discounted_payoff: 0.0,
    })
}

/// One path from stream 0 of `seed`.
pub fn simulate_crossing(
    model: &Ar1Model,
    x: f64,
    b: f64,
    gain: &GainFunction,
    seed: u64,
    max_steps: Option<u64>,
) -> Result<PathRecord> {
    let steps = max_steps.unwrap_or_else(|| default_max_steps(model.rho()));
    simulate_path(model, x, b, gain, steps, &mut path_rng(seed, 0), &mut Vec::new())
}

/// Aggregates over all paths of a run.
#[derive(Debug, Clone)]
pub struct SimulationSummary {
    pub n_paths: usize,
    pub max_steps: u64,
    pub censored: u64,
    /// `ρ^τ 1{G_i}` per phase.
    pub phi: Vec<Estimate>,
    /// `ρ^τ`.
    pub tau_transform: Estimate,
    /// `ρ^τ g(X_τ)`.
    pub joint: Estimate,
    /// `ρ^τ (g(X_τ) - Σ_i 1{G_i} E(g(b + R^i)))`, the paired factorization residual.
    pub factorization_residual: Estimate,
    /// `Σ_i Φ̂_i E(g(b + R^i))`.
    pub factorized: f64,
    /// Per-path records, in path order, when requested.
    pub records: Option<Vec<PathRecord>>,
}

impl SimulationSummary {
    pub fn censored_fraction(&self) -> f64 {
        self.censored as f64 / self.n_paths.max(1) as f64
    }
}

#[derive(Clone)]
struct BlockStats {
    phi: Vec<Moments>,
    tau: Moments,
    joint: Moments,
    residual: Moments,
    censored: u64,
    records: Option<Vec<PathRecord>>,
}

/// Simulate `cfg.n_paths` paths from `x` to the level `b`.
pub fn simulate(
    model: &Ar1Model,
    x: f64,
    b: f64,
    gain: &GainFunction,
    cfg: &McConfig,
    keep_records: bool,
) -> Result<SimulationSummary> {
    if cfg.n_paths == 0 {
        return Err(Error::InvalidParameter("n_paths must be positive".into()));
    }
    if x >= b {
        return Err(Error::Precondition(format!("start x = {x} must lie below b = {b}")));
    }
    let m = model.dim();
    let steps = cfg.max_steps.unwrap_or_else(|| default_max_steps(model.rho()));
    let overshoot_means: Vec<f64> = (0..m)
        .map(|i| overshoot_expectation(model.s_part(), i, b, gain))
        .collect::<Result<_>>()?;

    let blocks = cfg
        .policy
        .map_blocks(cfg.n_paths, BLOCK, |_, range| -> Result<BlockStats> {
            let mut st = BlockStats {
                phi: vec![Moments::default(); m],
                tau: Moments::default(),
                joint: Moments::default(),
                residual: Moments::default(),
                censored: 0,
                records: keep_records.then(|| Vec::with_capacity(range.len())),
            };
            let mut holding = Vec::new();
            for k in range {
                let mut rng = path_rng(cfg.seed, k as u64);
                let rec = simulate_path(model, x, b, gain, steps, &mut rng, &mut holding)?;
                let disc = match rec.tau {
                    Some(t) => model.rho().powi(t as i32),
                    None => 0.0,
                };
                for (i, mom) in st.phi.iter_mut().enumerate() {
                    mom.push(if rec.crossing_phase == Some(i) { disc } else { 0.0 });
                }
                st.tau.push(disc);
                st.joint.push(rec.discounted_payoff);
                let predicted = rec.crossing_phase.map_or(0.0, |i| disc * overshoot_means[i]);
                st.residual.push(rec.discounted_payoff - predicted);
                if rec.tau.is_none() {
                    st.censored += 1;
                }
                if let Some(r) = st.records.as_mut() {
                    r.push(rec);
                }
            }
            Ok(st)
        });

    let mut phi = vec![Moments::default(); m];
    let mut tau = Moments::default();
    let mut joint = Moments::default();
    let mut residual = Moments::default();
    let mut censored = 0;
    let mut records = keep_records.then(|| Vec::with_capacity(cfg.n_paths));
    for block in blocks {
        let block = block?;
        for (a, b) in phi.iter_mut().zip(&block.phi) {
            a.merge(b);
        }
        tau.merge(&block.tau);
        joint.merge(&block.joint);
        residual.merge(&block.residual);
        censored += block.censored;
        if let (Some(all), Some(part)) = (records.as_mut(), block.records) {
            all.extend(part);
        }
    }
    let phi: Vec<Estimate> = phi.iter().map(|mo| Estimate::from_moments(mo, censored)).collect();
    let factorized = phi.iter().zip(&overshoot_means).map(|(e, g)| e.mean * g).sum();
    Ok(SimulationSummary {
        n_paths: cfg.n_paths,
        max_steps: steps,
        censored,
        phi,
        tau_transform: Estimate::from_moments(&tau, censored),
        joint: Estimate::from_moments(&joint, censored),
        factorization_residual: Estimate::from_moments(&residual, censored),
        factorized,
        records,
    })
}

/// `E_x(ρ^τ 1{G_i})` per phase.
pub fn estimate_phi(model: &Ar1Model, x: f64, b: f64, cfg: &McConfig) -> Result<Vec<Estimate>> {
    Ok(simulate(model, x, b, &GainFunction::Power(0), cfg, false)?.phi)
}

/// `E_x(ρ^τ g(X_τ))`.
pub fn estimate_joint(model: &Ar1Model, x: f64, b: f64, gain: &GainFunction, cfg: &McConfig) -> Result<Estimate> {
    Ok(simulate(model, x, b, gain, cfg, false)?.joint)
}

/// Overshoots of one crossing-phase group with their fit statistics.
#[derive(Debug, Clone)]
pub struct PhaseOvershoot {
    pub phase: usize,
    pub overshoots: Vec<f64>,
    pub taus: Vec<f64>,
    /// KS distance to the law `PH(Q, e_i)`.
    pub ks: f64,
    pub ks_critical: f64,
    /// Sample correlation of `τ` and the overshoot.
    pub correlation: f64,
    /// `3/√n`.
    pub correlation_bound: f64,
}

impl PhaseOvershoot {
    pub fn ks_passes(&self) -> bool {
        self.ks < self.ks_critical
    }

    pub fn decorrelated(&self) -> bool {
        self.correlation.abs() <= self.correlation_bound
    }
}

#[derive(Debug, Clone)]
pub struct OvershootReport {
    pub groups: Vec<PhaseOvershoot>,
    pub warnings: Vec<String>,
}

/// Group crossings by phase and compare each group with `PH(Q, e_i)`.
pub fn overshoot_report(model: &Ar1Model, records: &[PathRecord]) -> Result<OvershootReport> {
    let m = model.dim();
    let mut overshoots = vec![Vec::new(); m];
    let mut taus = vec![Vec::new(); m];
    for r in records {
        if let (Some(i), Some(t)) = (r.crossing_phase, r.tau) {
            overshoots[i].push(r.overshoot);
            taus[i].push(t as f64);
        }
    }
    let mut groups = Vec::with_capacity(m);
    let mut warnings = Vec::new();
    for (i, (os, ts)) in overshoots.into_iter().zip(taus).enumerate() {
        let n = os.len();
        if n < MIN_GROUP {
            warnings.push(format!(
                "phase {} has only {n} crossings (fewer than {MIN_GROUP})",
                i + 1
            ));
        }
        let law = model.s_part().started_in(i)?;
        let ks = if n > 0 {
            ks_statistic(&os, |y| law.cdf(y))
        } else {
            f64::NAN
        };
        groups.push(PhaseOvershoot {
            phase: i,
            ks,
            ks_critical: if n > 0 { ks_critical_1pct(n) } else { f64::NAN },
            correlation: correlation(&ts, &os),
            correlation_bound: if n > 0 { 3.0 / (n as f64).sqrt() } else { f64::NAN },
            overshoots: os,
            taus: ts,
        });
    }
    Ok(OvershootReport { groups, warnings })
}

/// Simulate and run [`overshoot_report`].
pub fn overshoot_given_phase(model: &Ar1Model, x: f64, b: f64, cfg: &McConfig) -> Result<OvershootReport> {
    let summary = simulate(model, x, b, &GainFunction::Power(0), cfg, true)?;
    overshoot_report(model, summary.records.as_deref().unwrap_or(&[]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::innovations::{Innovation, NegativePart};
    use crate::phasetype::PhaseTypeDist;

    fn exp_model(t: NegativePart) -> Ar1Model {
        let inn = Innovation::new(PhaseTypeDist::exponential(1.0).unwrap(), t).unwrap();
        Ar1Model::new(0.5, 0.5, inn).unwrap()
    }

    fn two_phase_model() -> Ar1Model {
        let s = PhaseTypeDist::from_rows(&[&[-2.0, 1.0], &[0.0, -3.0]], &[0.5, 0.5]).unwrap();
        let inn = Innovation::new(s, NegativePart::Exponential { rate: 2.0 }).unwrap();
        Ar1Model::new(0.5, 0.6, inn).unwrap()
    }

    #[test]
    fn max_steps_bound() {
        let n = default_max_steps(0.5);
        assert!(0.5f64.powi(n as i32) < 1e-12 && 0.5f64.powi(n as i32 - 1) >= 1e-12);
    }

    #[test]
    fn same_seed_same_record() {
        let m = two_phase_model();
        let a = simulate_crossing(&m, 0.0, 1.0, &GainFunction::Identity, 9, None).unwrap();
        let b = simulate_crossing(&m, 0.0, 1.0, &GainFunction::Identity, 9, None).unwrap();
        assert_eq!(a, b);
        let start = simulate_crossing(&m, 2.0, 1.0, &GainFunction::Identity, 9, None).unwrap();
        assert_eq!(start.tau, Some(0));
        assert_eq!(start.crossing_phase, None);
        assert_eq!(start.overshoot, 1.0);
    }

    #[test]
    fn one_step_crossing_frequency() {
        let s = PhaseTypeDist::from_rows(&[&[-2.0, 1.0], &[0.0, -3.0]], &[0.5, 0.5]).unwrap();
        let inn = Innovation::new(s.clone(), NegativePart::Zero).unwrap();
        let model = Ar1Model::new(0.5, 0.6, inn).unwrap();
        let (x, b) = (0.2, 0.8);
        let cfg = McConfig::new(100_000, 4);
        let recs = simulate(&model, x, b, &GainFunction::Power(0), &cfg, true)
            .unwrap()
            .records
            .unwrap();
        let hits = recs.iter().filter(|r| r.tau == Some(1)).count() as f64 / recs.len() as f64;
        let p = s.survival(b - 0.5 * x);
        let se = (p * (1.0 - p) / recs.len() as f64).sqrt();
        assert!((hits - p).abs() < 3.0 * se, "{hits} vs {p} ± {se}");
    }

    #[test]
    fn records_satisfy_invariants() {
        let m = two_phase_model();
        let summary = simulate(&m, -0.5, 1.0, &GainFunction::Identity, &McConfig::new(5000, 1), true).unwrap();
        for r in summary.records.as_ref().unwrap() {
            match r.tau {
                Some(_) => {
                    assert!(r.overshoot >= 0.0);
                    assert!(r.crossing_phase.is_some_and(|i| i < 2));
                    assert!((r.x_tau - 1.0 - r.overshoot).abs() < 1e-12);
                }
                None => assert_eq!(r.discounted_payoff, 0.0),
            }
        }
        let total: f64 = summary.phi.iter().map(|e| e.mean).sum();
        assert!((total - summary.tau_transform.mean).abs() < 1e-12);
        let censored = summary
            .records
            .as_ref()
            .unwrap()
            .iter()
            .filter(|r| r.tau.is_none())
            .count();
        assert_eq!(censored as u64, summary.censored);
    }

    #[test]
    fn results_do_not_depend_on_workers() {
        let m = two_phase_model();
        let run = |policy| {
            let cfg = McConfig::new(10_000, 77).with_policy(policy);
            let s = simulate(&m, 0.0, 1.0, &GainFunction::Identity, &cfg, false).unwrap();
            (s.phi, s.joint)
        };
        let seq = run(ExecPolicy::Sequential);
        assert_eq!(seq, run(ExecPolicy::ParallelWith { workers: 2 }));
        assert_eq!(seq, run(ExecPolicy::ParallelWith { workers: 8 }));
    }

    #[test]
    fn exponential_overshoot_is_memoryless() {
        let m = exp_model(NegativePart::Exponential { rate: 2.0 });
        let report = overshoot_given_phase(&m, -1.0, 0.7, &McConfig::new(10_000, 3)).unwrap();
        let g = &report.groups[0];
        assert!(g.overshoots.len() >= 9_000);
        assert!(g.ks_passes(), "ks {} vs {}", g.ks, g.ks_critical);
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn embedding_error_below_zero_threshold() {
        // b < 0 with T = 0: λX_{n-1} can exceed b, leaving u* < 0
        let m = exp_model(NegativePart::Zero);
        let cfg = McConfig::new(2000, 5);
        let res = simulate(&m, -10.0, -1.0, &GainFunction::Power(0), &cfg, false);
        assert!(matches!(res, Err(Error::Embedding(_))), "{res:?}");
    }
}
