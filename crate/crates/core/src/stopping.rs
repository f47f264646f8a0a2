//! Discounted optimal stopping `v(x) = sup_τ E_x(ρ^τ g(X_τ))` over threshold
//! rules `τ_b`.
//!
//! The candidate value of threshold `b` started at `x` is
//! `Ψ_x(b) = Σ_i Φ_i^b(x) E(g(b + R^i))`. The optimal threshold solves the
//! continuous-fit equation `lim_{x↗b} Ψ_x(b) = g(b)`, and a candidate is
//! certified by checking `v ≥ g` below the threshold and
//! `ρ E v(λx + Z) ≤ v(x)` everywhere.

use crate::error::{Error, Result};
use crate::exec::ExecPolicy;
use crate::innovations::NegativePart;
use crate::passage::{closed_form_exp, exp_ratio, joint_from_phi, joint_functional, PassageProblem, ResidueSystem};
use crate::quadrature::{gauss_laguerre, gauss_legendre};
use crate::roots::{find_all_roots, find_root, golden_max};
use crate::transforms::TransformEngine;
use std::sync::Arc;

/// Gain `g` of the stopping problem.
#[derive(Clone)]
pub enum GainFunction {
    /// `g(x) = x`.
    Identity,
    /// `g(x) = x^n`.
    Power(u32),
    /// `g(x) = (x - K)^+`.
    Call(f64),
    /// A user function with `|g(x)| ≤ C e^{growth·|x|}`.
    BoundedCustom {
        f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        growth: f64,
    },
}

impl std::fmt::Debug for GainFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GainFunction::Identity => write!(f, "Identity"),
            GainFunction::Power(n) => write!(f, "Power({n})"),
            GainFunction::Call(k) => write!(f, "Call({k})"),
            GainFunction::BoundedCustom { growth, .. } => write!(f, "BoundedCustom {{ growth: {growth} }}"),
        }
    }
}

impl GainFunction {
    pub fn bounded_custom<F: Fn(f64) -> f64 + Send + Sync + 'static>(f: F, growth: f64) -> Self {
        GainFunction::BoundedCustom { f: Arc::new(f), growth }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            GainFunction::Identity => x,
            GainFunction::Power(n) => x.powi(*n as i32),
            GainFunction::Call(k) => (x - k).max(0.0),
            GainFunction::BoundedCustom { f, .. } => f(x),
        }
    }
}

/// `Ψ_x(b) = E_x(ρ^{τ_b} g(X_{τ_b}))`.
pub fn psi_of(x: f64, b: f64, engine: &TransformEngine, gain: &GainFunction) -> Result<f64> {
    joint_functional(&PassageProblem::new(engine, b, x)?, gain)
}

/// Continuous-fit function of the exponential example with identity gain:
/// `f(b) = ρ/μ - Σ_{k≥0} (ρ;λ)_{k+1} (μ^k/k!) (1 - ρλ^{k+1}/(k+1)) b^{k+1}`.
pub fn f_of_b(b: f64, mu: f64, rho: f64, lambda: f64) -> f64 {
    let mut sum = rho / mu;
    let mut poch = 1.0 - rho; // (ρ;λ)_{k+1}
    let mut lam = lambda; // λ^{k+1}
    let mut coef = 1.0; // μ^k / k!
    let mut bp = b; // b^{k+1}
    for k in 0..100_000usize {
        let term = poch * coef * (1.0 - rho * lam / (k + 1) as f64) * bp;
        sum -= term;
        if (k as f64) > mu * b.abs() && term.abs() < 1e-15 * sum.abs().max(1e-300) {
            break;
        }
        poch *= 1.0 - rho * lam;
        lam *= lambda;
        coef *= mu / (k + 1) as f64;
        bp *= b;
    }
    sum
}

/// How `v` is evaluated below the threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
enum ValueForm {
    /// `(b* + 1/μ) E_x(ρ^{τ_{b*}})` from the exponential closed form.
    ExpIdentity { mu: f64, rho: f64, lambda: f64 },
    /// `Ψ_x(b*)` from the residue system.
    Residue,
}

/// An optimal (or candidate) threshold with its value function.
#[derive(Debug, Clone)]
pub struct StoppingSolution {
    pub b_star: f64,
    /// `|lim_{x↗b*} Ψ_x(b*) - g(b*)|`.
    pub fit_residual: f64,
    /// Every root of the continuous-fit function found in the search window.
    pub candidates: Vec<f64>,
    /// Maximizer of `b ↦ Ψ_{x₀}(b)` used as a cross-check.
    pub maximizer: Option<f64>,
    pub reference_x: Option<f64>,
    /// `|b* - maximizer| ≤ 1e-4`.
    pub methods_agree: bool,
    engine: Arc<TransformEngine>,
    gain: GainFunction,
    form: ValueForm,
}

impl StoppingSolution {
    /// The threshold rule `τ_b` for an arbitrary `b`, without optimization.
    pub fn candidate(engine: Arc<TransformEngine>, gain: GainFunction, b: f64) -> Result<Self> {
        let fit_residual = fit_function(&engine, &gain, b)?.abs();
        Ok(Self {
            b_star: b,
            fit_residual,
            candidates: vec![b],
            maximizer: None,
            reference_x: None,
            methods_agree: true,
            engine,
            gain,
            form: ValueForm::Residue,
        })
    }

    pub fn engine(&self) -> &TransformEngine {
        &self.engine
    }

    pub fn gain(&self) -> &GainFunction {
        &self.gain
    }

    /// True when the continuous-fit equation had more than one root.
    pub fn non_unique(&self) -> bool {
        self.candidates.len() > 1
    }

    fn value_fn(&self) -> Result<ValueFn<'_>> {
        let sys = match self.form {
            ValueForm::Residue => Some(ResidueSystem::build(&self.engine, self.b_star)?),
            ValueForm::ExpIdentity { .. } => None,
        };
        Ok(ValueFn { sol: self, sys })
    }

    /// `v(x)`: `Ψ_x(b*)` below the threshold and `g(x)` at or above it.
    pub fn value_at(&self, x: f64) -> Result<f64> {
        self.value_fn()?.eval(x)
    }

    /// `(x, v(x), g(x))` rows.
    pub fn value_curve(&self, xs: &[f64]) -> Result<Vec<(f64, f64, f64)>> {
        let vf = self.value_fn()?;
        xs.iter().map(|&x| Ok((x, vf.eval(x)?, self.gain.eval(x)))).collect()
    }
}

struct ValueFn<'a> {
    sol: &'a StoppingSolution,
    sys: Option<ResidueSystem<'a>>,
}

impl ValueFn<'_> {
    fn eval(&self, x: f64) -> Result<f64> {
        let b = self.sol.b_star;
        if x >= b {
            return Ok(self.sol.gain.eval(x));
        }
        match (self.sol.form, &self.sys) {
            (ValueForm::ExpIdentity { mu, rho, lambda }, _) => {
                Ok((b + 1.0 / mu) * closed_form_exp(x, b, mu, rho, lambda)?)
            }
            (ValueForm::Residue, Some(sys)) => joint_from_phi(&self.sol.engine, &sys.solve(x)?, &self.sol.gain),
            (ValueForm::Residue, None) => unreachable!("residue form always carries its system"),
        }
    }
}

/// Offset used for the one-sided limit `Ψ_{b-ε}(b)`.
pub const FIT_EPSILON: f64 = 1e-7;

/// `lim_{x↗b} Ψ_x(b)` by Richardson extrapolation from `b - ε` and `b - ε/2`,
/// together with the size of the extrapolation correction.
pub fn left_limit(engine: &TransformEngine, gain: &GainFunction, b: f64, eps: f64) -> Result<(f64, f64)> {
    let sys = ResidueSystem::build(engine, b)?;
    let far = joint_from_phi(engine, &sys.solve(b - eps)?, gain)?;
    let near = joint_from_phi(engine, &sys.solve(b - 0.5 * eps)?, gain)?;
    Ok((2.0 * near - far, (near - far).abs()))
}

/// `F(b) = lim_{x↗b} Ψ_x(b) - g(b)`.
pub fn fit_function(engine: &TransformEngine, gain: &GainFunction, b: f64) -> Result<f64> {
    Ok(left_limit(engine, gain, b, FIT_EPSILON)?.0 - gain.eval(b))
}

/// Threshold of the exponential example (`S ~ Exp(μ)`, `T = 0`, `g(x) = x`)
/// as the root of [`f_of_b`] on `[0, ρ/(μ(1-ρ)(1-ρλ)) + 0.1]`.
pub fn solve_threshold_exp_identity(mu: f64, rho: f64, lambda: f64, tol: f64) -> Result<StoppingSolution> {
    if !(mu > 0.0 && mu.is_finite()) || !(rho > 0.0 && rho < 1.0) || !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "need mu > 0 and rho, lambda in (0, 1); got mu = {mu}, rho = {rho}, lambda = {lambda}"
        )));
    }
    let b_hi = rho / (mu * (1.0 - rho) * (1.0 - rho * lambda)) + 0.1;
    let f = |b: f64| Ok(f_of_b(b, mu, rho, lambda));
    if f_of_b(b_hi, mu, rho, lambda) >= 0.0 {
        return Err(Error::Bracket(format!("f({b_hi}) is not negative")));
    }
    let b_star = find_root(f, 0.0, b_hi, 1e-15, tol)?;
    let fb = f_of_b(b_star, mu, rho, lambda);
    if fb.abs() > tol {
        return Err(Error::NumericalConsistency(format!(
            "|f(b*)| = {:.3e} exceeds {tol:.1e}",
            fb.abs()
        )));
    }

    let fit_residual = ((b_star + 1.0 / mu) * exp_ratio(b_star, b_star, mu, rho, lambda)? - b_star).abs();
    // golden-section maximization of b ↦ Ψ_{x₀}(b)
    let x0 = b_star.min(0.0) - 1.0;
    let psi = |b: f64| Ok((b + 1.0 / mu) * closed_form_exp(x0, b, mu, rho, lambda)?);
    let maximizer = golden_max(psi, x0 + 1e-9, b_hi, 1e-9)?;

    let inn =
        crate::innovations::Innovation::new(crate::phasetype::PhaseTypeDist::exponential(mu)?, NegativePart::Zero)?;
    let engine = Arc::new(TransformEngine::new(crate::transforms::Ar1Model::new(
        lambda, rho, inn,
    )?)?);
    Ok(StoppingSolution {
        b_star,
        fit_residual,
        candidates: vec![b_star],
        maximizer: Some(maximizer),
        reference_x: Some(x0),
        methods_agree: (maximizer - b_star).abs() <= 1e-4,
        engine,
        gain: GainFunction::Identity,
        form: ValueForm::ExpIdentity { mu, rho, lambda },
    })
}

/// Threshold by continuous fit on `[lo, hi]`, cross-checked by maximizing
/// `b ↦ Ψ_{x₀}(b)` with `x₀ = lo - 1`.
///
/// All roots of the fit function are kept in `candidates`; the one closest
/// to the maximizer is returned as `b_star`.
pub fn solve_threshold_general(
    engine: Arc<TransformEngine>,
    gain: GainFunction,
    window: (f64, f64),
) -> Result<StoppingSolution> {
    let (lo, hi) = window;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidParameter(format!("search window [{lo}, {hi}] is empty")));
    }
    let roots = find_all_roots(|b| fit_function(&engine, &gain, b), lo, hi, 64, 1e-12)?;
    if roots.is_empty() {
        return Err(Error::Bracket(format!(
            "the continuous-fit function has no sign change in [{lo}, {hi}]; widen the window"
        )));
    }
    let x0 = lo - 1.0;
    let maximizer = golden_max(|b| psi_of(x0, b, &engine, &gain), lo, hi, 1e-9)?;
    let b_star = *roots
        .iter()
        .min_by(|a, b| (*a - maximizer).abs().total_cmp(&(*b - maximizer).abs()))
        .expect("roots is nonempty");
    let fit_residual = fit_function(&engine, &gain, b_star)?.abs();
    Ok(StoppingSolution {
        b_star,
        fit_residual,
        candidates: roots,
        maximizer: Some(maximizer),
        reference_x: Some(x0),
        methods_agree: (maximizer - b_star).abs() <= 1e-4,
        engine,
        gain,
        form: ValueForm::Residue,
    })
}

/// Grid for [`verify_solution`].
#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    /// Points for condition (a) on `[b* - half_width, b*)`.
    pub below: usize,
    /// Points for condition (b) on `[b* - half_width, b* + half_width]`.
    pub span: usize,
    pub half_width: f64,
    pub policy: ExecPolicy,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            below: 200,
            span: 101,
            half_width: 5.0,
            policy: ExecPolicy::Parallel,
        }
    }
}

/// Worst margins of the two verification conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    /// `min (v - g)` below `b*` and where it occurs.
    pub dominance_margin: f64,
    pub dominance_at: f64,
    pub dominance_points: usize,
    /// `min (v(x) - ρ E v(λx + Z))` over the span and where it occurs.
    pub excessive_margin: f64,
    pub excessive_at: f64,
    pub excessive_points: usize,
}

impl VerificationReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.dominance_margin >= -tol && self.excessive_margin >= -tol
    }
}

/// Default tolerance on verification margins (quadrature error).
pub const VERIFY_TOL: f64 = 1e-6;

const QUAD_MOVE: f64 = 1e-8;
const RULE_SIZES: [usize; 6] = [16, 32, 64, 128, 256, 512];

struct Rules {
    legendre: Vec<(Vec<f64>, Vec<f64>)>,
    laguerre: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Rules {
    fn new() -> Self {
        Self {
            legendre: RULE_SIZES.iter().map(|&n| gauss_legendre(n)).collect(),
            laguerre: RULE_SIZES.iter().map(|&n| gauss_laguerre(n)).collect(),
        }
    }
}

/// Check `v ≥ g` below `b*` and `ρ E v(λx + Z) ≤ v(x)` on the grid.
/// Violations are reported in the margins, not raised.
pub fn verify_solution(sol: &StoppingSolution, grid: &GridSpec) -> Result<VerificationReport> {
    let b = sol.b_star;
    let vf = sol.value_fn()?;
    let below = grid.below.max(2);
    let xs_a: Vec<f64> = (0..below)
        .map(|k| b - grid.half_width + grid.half_width * k as f64 / below as f64)
        .collect();
    let mut dominance = (f64::INFINITY, f64::NAN);
    for &x in &xs_a {
        let margin = vf.eval(x)? - sol.gain.eval(x);
        if margin < dominance.0 {
            dominance = (margin, x);
        }
    }

    let span = grid.span.max(2);
    let xs_b: Vec<f64> = (0..span)
        .map(|k| b - grid.half_width + 2.0 * grid.half_width * k as f64 / (span - 1) as f64)
        .collect();
    let rules = Rules::new();
    let margins: Vec<Result<f64>> = grid.policy.map_indices(xs_b.len(), |k| {
        let x = xs_b[k];
        let next = expected_next_value(sol, &vf, &rules, x)?;
        Ok(vf.eval(x)? - sol.engine.model().rho() * next)
    });
    let mut excessive = (f64::INFINITY, f64::NAN);
    for (x, m) in xs_b.iter().zip(margins) {
        let m = m?;
        if m < excessive.0 {
            excessive = (m, *x);
        }
    }
    Ok(VerificationReport {
        dominance_margin: dominance.0,
        dominance_at: dominance.1,
        dominance_points: xs_a.len(),
        excessive_margin: excessive.0,
        excessive_at: excessive.1,
        excessive_points: xs_b.len(),
    })
}

/// Doubles the rule size until two successive estimates differ by less than
/// [`QUAD_MOVE`].
fn converge<F: FnMut(usize) -> Result<f64>>(mut estimate: F, what: &str) -> Result<f64> {
    let mut prev = estimate(0)?;
    for level in 1..RULE_SIZES.len() {
        let next = estimate(level)?;
        if (next - prev).abs() < QUAD_MOVE * next.abs().max(1.0) {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::Quadrature(format!(
        "{what} still moving after {} nodes",
        RULE_SIZES[RULE_SIZES.len() - 1]
    )))
}

/// `E v(λx + Z)`: Gauss–Legendre on `S ∈ [0, s_k]` up to the kink of `v` at
/// `b*`, Gauss–Laguerre on the tail, and Gauss–Laguerre over `T`.
fn expected_next_value(sol: &StoppingSolution, vf: &ValueFn<'_>, rules: &Rules, x: f64) -> Result<f64> {
    let model = sol.engine.model();
    let s = model.s_part();
    let rate = s.spectral().min_decay();
    let shift = model.lambda() * x;
    let b = sol.b_star;

    let s_expect = |t: f64| -> Result<f64> {
        let kink = b - shift + t;
        converge(
            |level| {
                let mut total = 0.0;
                if kink > 0.0 {
                    let (nodes, weights) = &rules.legendre[level];
                    let (c, h) = (0.5 * kink, 0.5 * kink);
                    for (z, w) in nodes.iter().zip(weights) {
                        let sv = c + h * z;
                        total += w * h * s.pdf(sv) * vf.eval(shift + sv - t)?;
                    }
                }
                let start = kink.max(0.0);
                let (nodes, weights) = &rules.laguerre[level];
                for (u, w) in nodes.iter().zip(weights) {
                    let sv = start + u / rate;
                    let dens = s.pdf(sv);
                    if dens == 0.0 {
                        continue;
                    }
                    total += w * u.exp() * dens / rate * vf.eval(shift + sv - t)?;
                }
                Ok(total)
            },
            "condition (b) quadrature over S",
        )
    };

    match *model.t_part() {
        NegativePart::Zero => s_expect(0.0),
        NegativePart::PointMass { d } => s_expect(d),
        NegativePart::Exponential { rate } => converge(
            |level| {
                let (nodes, weights) = &rules.laguerre[level.min(3)];
                nodes
                    .iter()
                    .zip(weights)
                    .map(|(u, w)| Ok(w * s_expect(u / rate)?))
                    .sum()
            },
            "condition (b) quadrature over T",
        ),
        NegativePart::GammaInt { shape, rate } => {
            let norm: f64 = (1..shape).map(f64::from).product();
            converge(
                |level| {
                    let (nodes, weights) = &rules.laguerre[level.min(3)];
                    nodes
                        .iter()
                        .zip(weights)
                        .map(|(u, w)| Ok(w * u.powi(shape as i32 - 1) / norm * s_expect(u / rate)?))
                        .sum()
                },
                "condition (b) quadrature over T",
            )
        }
    }
}

/// `|Ψ_{b-ε}(b) - g(b)|` for each `ε`.
pub fn continuous_fit_probe(
    engine: &TransformEngine,
    gain: &GainFunction,
    b: f64,
    epsilons: &[f64],
) -> Result<Vec<f64>> {
    let sys = ResidueSystem::build(engine, b)?;
    epsilons
        .iter()
        .map(|&eps| Ok((joint_from_phi(engine, &sys.solve(b - eps)?, gain)? - gain.eval(b)).abs()))
        .collect()
}

/// The two one-sided limits `lim_ε Φ^b(b - ε)` and `lim_ε Φ^{b+ε}(b)`, each
/// extrapolated from `ε` and `ε/2`.
pub fn stet_limits(engine: &TransformEngine, b: f64, eps: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let sys = ResidueSystem::build(engine, b)?;
    let l1 = sys.solve(b - eps)?.phi_vec;
    let l2 = sys.solve(b - 0.5 * eps)?.phi_vec;
    let r1 = ResidueSystem::build(engine, b + eps)?.solve(b)?.phi_vec;
    let r2 = ResidueSystem::build(engine, b + 0.5 * eps)?.solve(b)?.phi_vec;
    let extrapolate = |far: &[f64], near: &[f64]| far.iter().zip(near).map(|(f, n)| 2.0 * n - f).collect::<Vec<_>>();
    Ok((extrapolate(&l1, &l2), extrapolate(&r1, &r2)))
}
