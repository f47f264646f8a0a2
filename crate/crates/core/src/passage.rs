//! Threshold time `τ_b = inf{n ≥ 0 : X_n ≥ b}` and overshoot `X_τ - b`.
//!
//! The crossing transform `Φ_i(x) = E_x(ρ^τ 1{G_i})`, where `G_i` is the
//! event that the phase chain of the crossing innovation sits in phase `i`
//! when the level is passed, solves the linear system
//!
//! ```text
//! Σ_i a_ij Φ_i(x) = c_j(x),   j = 1..m,
//! ```
//!
//! obtained by matching residues at the poles `μ_j` of the identity
//! `Σ_i η_{δ,i} Φ_i(x) = h_δ(x)` after both sides are multiplied by `e^{-δb}`.
//! Given the crossing phase, the overshoot is `PH(Q, e_i)` and independent of
//! `τ`, so `E_x(ρ^τ g(X_τ)) = Σ_i Φ_i(x) E(g(b + R^i))`.

use crate::error::{Error, Result};
use crate::exec::ExecPolicy;
use crate::phasetype::{assert_real, CMatrix, CVector, PhaseTypeDist};
use crate::qseries::q_pochhammer;
use crate::quadrature::integrate_to_infinity;
use crate::stopping::GainFunction;
use crate::transforms::TransformEngine;
use crate::C64;

/// Condition number above which the residue system counts as singular.
pub const MAX_CONDITION: f64 = 1e12;
const PROB_TOL: f64 = 1e-9;

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// `(engine, b, x)` with `x < b`.
#[derive(Debug, Clone, Copy)]
pub struct PassageProblem<'a> {
    pub engine: &'a TransformEngine,
    pub b: f64,
    pub x: f64,
}

impl<'a> PassageProblem<'a> {
    pub fn new(engine: &'a TransformEngine, b: f64, x: f64) -> Result<Self> {
        if !b.is_finite() || !x.is_finite() {
            return Err(Error::InvalidParameter("b and x must be finite".into()));
        }
        if x >= b {
            return Err(Error::Precondition(format!(
                "start x = {x} must lie below the threshold b = {b}"
            )));
        }
        Ok(Self { engine, b, x })
    }
}

/// `Φ(x) = (E_x(ρ^τ 1{G_i}))_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossingTransform {
    pub x: f64,
    pub b: f64,
    pub phi_vec: Vec<f64>,
    pub error_bound: f64,
}

impl CrossingTransform {
    /// `E_x(ρ^τ) = Σ_i Φ_i(x)`.
    pub fn total(&self) -> f64 {
        self.phi_vec.iter().sum()
    }
}

/// Residue form of the crossing identity for one threshold `b`.
#[derive(Debug, Clone)]
pub struct ResidueSystem<'a> {
    engine: &'a TransformEngine,
    b: f64,
    /// `k_j = e^{-μ_j b} E(e^{-μ_j T}) e^{φ(λμ_j)}`.
    k: Vec<C64>,
    /// `α P_j q`.
    alpha_pq: Vec<C64>,
    a: CMatrix,
    /// Row scaling of `Aᵀ`.
    scale: Vec<f64>,
    lu: nalgebra::LU<C64, nalgebra::Dyn, nalgebra::Dyn>,
    condition: f64,
    series_error: f64,
}

impl<'a> ResidueSystem<'a> {
    pub fn build(engine: &'a TransformEngine, b: f64) -> Result<Self> {
        if !b.is_finite() {
            return Err(Error::InvalidParameter(format!("threshold b = {b} must be finite")));
        }
        let model = engine.model();
        let sd = model.spectral();
        let m = sd.dim();
        let mu = sd.mu();
        let alpha_pq = model.s_part().density_weights().to_vec();
        let mut k = Vec::with_capacity(m);
        for &mu_j in mu {
            let start = engine.ladder(mu_j)?.value();
            k.push((-mu_j * b).exp() * model.t_part().laplace(mu_j)? / start);
        }
        let mut a = CMatrix::zeros(m, m);
        let mut series_error = 0.0f64;
        for j in 0..m {
            for i in 0..m {
                let s = engine.restart_series(j, i, c(1.0), b)?;
                series_error = series_error.max(s.error / s.value.norm().max(1e-300));
                a[(i, j)] = sd.exit_parts()[j][i] + k[j] * s.value * alpha_pq[j];
            }
        }
        // equations are indexed by j: row j of Aᵀ
        let mut at = a.transpose();
        let mut scale = vec![1.0; m];
        for (j, s) in scale.iter_mut().enumerate() {
            let norm = at.row(j).iter().fold(0.0f64, |acc, z| acc.max(z.norm()));
            if norm > 0.0 {
                *s = 1.0 / norm;
                at.row_mut(j).scale_mut(*s);
            }
        }
        let sv = at.clone().singular_values();
        let smax = sv.max();
        let smin = sv.min();
        let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !(condition <= MAX_CONDITION) {
            return Err(Error::SingularSystem { condition });
        }
        Ok(Self {
            engine,
            b,
            k,
            alpha_pq,
            a,
            scale,
            lu: at.lu(),
            condition,
            series_error,
        })
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn engine(&self) -> &'a TransformEngine {
        self.engine
    }

    /// Pole locations `μ_j`.
    pub fn mu(&self) -> &[C64] {
        self.engine.model().spectral().mu()
    }

    /// `a_ij`, the residue of the normalized `η_{δ,i}` at `δ = μ_j`
    /// (as the coefficient of `1/(μ_j - δ)`).
    pub fn a_matrix(&self) -> &CMatrix {
        &self.a
    }

    /// 2-norm condition number of the row-equilibrated system.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// `c_j(x) = ρ k_j (αP_j q) F_j(x)` and the largest relative series error.
    pub fn c_vector(&self, x: f64) -> Result<(CVector, f64)> {
        let m = self.k.len();
        let rho = self.engine.model().rho();
        let mut out = CVector::zeros(m);
        let mut err = 0.0f64;
        for j in 0..m {
            let f = self.engine.f_gamma_scalar(j, x, c(1.0))?;
            err = err.max(f.error / f.value.norm().max(1e-300));
            out[j] = self.k[j] * self.alpha_pq[j] * f.value * rho;
        }
        Ok((out, err))
    }

    /// `Σ_j a_ij / (μ_j - δ)`, which equals `e^{-δb} η_{δ,i}`.
    pub fn reconstruct_eta(&self, delta: C64, i: usize) -> C64 {
        self.mu()
            .iter()
            .enumerate()
            .map(|(j, mu)| self.a[(i, j)] / (mu - delta))
            .sum()
    }

    /// `Σ_j c_j(x) / (μ_j - δ)`, which equals `e^{-δb} h_δ(x)` for `x < b`.
    pub fn reconstruct_h(&self, delta: C64, x: f64) -> Result<C64> {
        let (cv, _) = self.c_vector(x)?;
        Ok(self.mu().iter().zip(cv.iter()).map(|(mu, cj)| cj / (mu - delta)).sum())
    }

    /// Solve for `Φ(x)`.
    pub fn solve(&self, x: f64) -> Result<CrossingTransform> {
        if !x.is_finite() {
            return Err(Error::InvalidParameter(format!("x = {x} must be finite")));
        }
        if x >= self.b {
            return Err(Error::Precondition(format!(
                "start x = {x} must lie below the threshold b = {}",
                self.b
            )));
        }
        let (mut rhs, c_err) = self.c_vector(x)?;
        for (r, s) in rhs.iter_mut().zip(&self.scale) {
            *r *= *s;
        }
        let sol = self.lu.solve(&rhs).ok_or(Error::SingularSystem {
            condition: f64::INFINITY,
        })?;
        let scale = sol.iter().fold(0.0f64, |a, z| a.max(z.norm()));
        let mut phi_vec = Vec::with_capacity(sol.len());
        for (i, z) in sol.iter().enumerate() {
            let v = assert_real(*z, scale.max(1e-3), &format!("Phi_{}", i + 1))?;
            if v < -PROB_TOL {
                return Err(Error::NumericalConsistency(format!(
                    "Phi_{} = {v:.3e} is negative (x = {x}, b = {})",
                    i + 1,
                    self.b
                )));
            }
            phi_vec.push(v.max(0.0));
        }
        let rho = self.engine.model().rho();
        let total: f64 = phi_vec.iter().sum();
        if total > rho + PROB_TOL {
            return Err(Error::NumericalConsistency(format!(
                "sum of Phi = {total} exceeds rho = {rho} (x = {x}, b = {})",
                self.b
            )));
        }
        let rel = c_err.max(self.series_error) + 1e-15 * phi_vec.len() as f64;
        Ok(CrossingTransform {
            x,
            b: self.b,
            phi_vec,
            error_bound: self.condition * rel * total.max(f64::MIN_POSITIVE),
        })
    }

    /// [`solve`](Self::solve) over a grid of starting points.
    pub fn solve_grid(&self, xs: &[f64], policy: ExecPolicy) -> Result<Vec<CrossingTransform>> {
        policy
            .map_indices(xs.len(), |k| self.solve(xs[k]))
            .into_iter()
            .collect()
    }
}

/// `Φ(x)` for a passage problem.
pub fn solve_phi(problem: &PassageProblem<'_>) -> Result<CrossingTransform> {
    ResidueSystem::build(problem.engine, problem.b)?.solve(problem.x)
}

/// `E_x(ρ^τ)`.
pub fn laplace_tau(problem: &PassageProblem<'_>) -> Result<f64> {
    Ok(solve_phi(problem)?.total())
}

/// `Σ_k (ρ;λ)_k y^k / k!`, summed past the peak term until the terms drop
/// below `1e-15` of the partial sum.
fn pochhammer_exp_series(y: f64, rho: f64, lambda: f64) -> Result<f64> {
    let mut sum = 1.0;
    let mut poch = 1.0;
    let mut power = 1.0;
    let mut lam_k = 1.0;
    for k in 1..100_000usize {
        poch *= 1.0 - rho * lam_k;
        lam_k *= lambda;
        power *= y / k as f64;
        let term = poch * power;
        sum += term;
        if (k as f64) > y.abs() && term.abs() < 1e-15 * sum.abs() {
            return Ok(sum);
        }
    }
    Err(Error::NonConvergence {
        what: "q-exponential series",
        terms: 100_000,
    })
}

fn check_exp_params(mu: f64, rho: f64, lambda: f64) -> Result<()> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::InvalidParameter(format!("mu = {mu} must be positive")));
    }
    if !(rho > 0.0 && rho < 1.0) || !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "rho = {rho} and lambda = {lambda} must lie in (0, 1)"
        )));
    }
    Ok(())
}

pub(crate) fn exp_ratio(x: f64, b: f64, mu: f64, rho: f64, lambda: f64) -> Result<f64> {
    Ok(rho * pochhammer_exp_series(mu * lambda * x, rho, lambda)? / pochhammer_exp_series(mu * b, rho, lambda)?)
}

/// `E_x(ρ^{τ_b})` for `S ~ Exp(μ)` and `T = 0`:
/// `ρ Σ_k (ρ;λ)_k (μλx)^k/k! / Σ_k (ρ;λ)_k (μb)^k/k!`.
pub fn closed_form_exp(x: f64, b: f64, mu: f64, rho: f64, lambda: f64) -> Result<f64> {
    check_exp_params(mu, rho, lambda)?;
    if x >= b {
        return Err(Error::Precondition(format!("start x = {x} must lie below b = {b}")));
    }
    exp_ratio(x, b, mu, rho, lambda)
}

/// `E_x(ρ^τ)` for a one-phase model with any negative part:
///
/// ```text
/// Σ_{n≥1} e^{λ^n μ x - φ(λ^n μ)} ρ^n  /  Σ_{n≥0} e^{λ^n μ b - φ(λ^{n+1} μ)} ρ^n / E(e^{-λ^n μ T})
/// ```
pub fn closed_form_exp_general(x: f64, b: f64, engine: &TransformEngine) -> Result<f64> {
    let model = engine.model();
    if model.dim() != 1 {
        return Err(Error::Precondition(format!(
            "one-phase model required, got {} phases",
            model.dim()
        )));
    }
    if x >= b {
        return Err(Error::Precondition(format!("start x = {x} must lie below b = {b}")));
    }
    let mu = model.spectral().mu()[0];
    let lambda = model.lambda();
    let t = *model.t_part();
    let num = engine.ladder_sum(mu, x.abs(), |v| Ok((v * x).exp()))?;
    // shift the n ≥ 0 sum to n ≥ 1 so that it runs over the same ladder
    let den = engine.ladder_sum(mu, b.abs() / lambda, |v| {
        let prev = v / lambda;
        Ok((prev * b).exp() / t.laplace(prev)?)
    })?;
    let ratio = num.value * model.rho() / den.value;
    assert_real(ratio, ratio.norm(), "E_x(rho^tau)")
}

/// Moments of `PH(Q, e_i)`: `E((R^i)^k) = k! e_i (-Q)^{-k} 1`.
fn phase_moment(dist: &PhaseTypeDist, i: usize, k: u32) -> f64 {
    let sd = dist.spectral();
    let fact: f64 = (1..=k).map(f64::from).product();
    let v: C64 = sd
        .mu()
        .iter()
        .zip(sd.unit_parts())
        .map(|(mu, p1)| p1[i] / mu.powu(k))
        .sum();
    fact * v.re
}

/// `E(g(b + R^i))` with `R^i ~ PH(Q, e_i)`.
pub fn overshoot_expectation(dist: &PhaseTypeDist, i: usize, b: f64, gain: &GainFunction) -> Result<f64> {
    let m = dist.dim();
    if i >= m {
        return Err(Error::InvalidParameter(format!("phase {i} out of range 0..{m}")));
    }
    match gain {
        GainFunction::Identity => Ok(b + phase_moment(dist, i, 1)),
        GainFunction::Power(n) => {
            let mut binom = 1.0;
            let mut total = 0.0;
            for k in 0..=*n {
                total += binom * b.powi((*n - k) as i32) * phase_moment(dist, i, k);
                binom *= f64::from(*n - k) / f64::from(k + 1);
            }
            Ok(total)
        }
        GainFunction::Call(strike) => {
            let strike = *strike;
            if strike >= b {
                let sd = dist.spectral();
                let v: C64 = sd
                    .mu()
                    .iter()
                    .zip(sd.unit_parts())
                    .map(|(mu, p1)| p1[i] * (-mu * (strike - b)).exp() / mu)
                    .sum();
                Ok(v.re)
            } else {
                Ok(b - strike + phase_moment(dist, i, 1))
            }
        }
        GainFunction::BoundedCustom { .. } => {
            let ri = dist.started_in(i)?;
            integrate_to_infinity(|r| gain.eval(b + r) * ri.pdf(r), 0.0, 1e-12)
        }
    }
}

/// `E_x(ρ^τ g(X_τ)) = Σ_i Φ_i(x) E(g(b + R^i))`.
pub fn joint_functional(problem: &PassageProblem<'_>, gain: &GainFunction) -> Result<f64> {
    let phi = solve_phi(problem)?;
    joint_from_phi(problem.engine, &phi, gain)
}

pub(crate) fn joint_from_phi(engine: &TransformEngine, phi: &CrossingTransform, gain: &GainFunction) -> Result<f64> {
    let dist = engine.model().s_part();
    let mut total = 0.0;
    for (i, p) in phi.phi_vec.iter().enumerate() {
        if *p != 0.0 {
            total += p * overshoot_expectation(dist, i, phi.b, gain)?;
        }
    }
    Ok(total)
}

/// `|∂_b E_x(ρ^{τ_b}) - E_x(ρ^{τ_b}) μ (E_b(ρ^{τ_{b+}}) - 1)|`, with the
/// derivative taken by a central difference of step `h`.
pub fn derivative_identity_residual(x: f64, b: f64, mu: f64, rho: f64, lambda: f64, h: f64) -> Result<f64> {
    check_exp_params(mu, rho, lambda)?;
    if x >= b - h {
        return Err(Error::Precondition(format!("x = {x} must lie below b - h = {}", b - h)));
    }
    let fd = (exp_ratio(x, b + h, mu, rho, lambda)? - exp_ratio(x, b - h, mu, rho, lambda)?) / (2.0 * h);
    let at_b = exp_ratio(b, b, mu, rho, lambda)?;
    let rhs = exp_ratio(x, b, mu, rho, lambda)? * mu * (at_b - 1.0);
    Ok((fd - rhs).abs())
}

/// [`derivative_identity_residual`] at step `1e-4`.
pub fn derivative_identity_check(x: f64, b: f64, mu: f64, rho: f64, lambda: f64) -> Result<f64> {
    derivative_identity_residual(x, b, mu, rho, lambda, 1e-4)
}

/// `(ρ;λ)_k` as used by the exponential closed forms.
pub fn rho_lambda_pochhammer(rho: f64, lambda: f64, k: usize) -> f64 {
    q_pochhammer(rho, lambda, k)
}
