//! The stationary log-Laplace exponent `φ(u) = Σ_k ψ(λ^k u)` and the series
//! objects built on it: `f_γ`, `α_δ`, `h_{γ,δ}`, `ψ^i` and `η_{γ,δ,i}`.
//!
//! Exponentials of `φ` are always formed as products of transform values,
//! `e^{φ(u)} = Π_k E(e^{λ^k u Z})`, so no logarithm branch enters the
//! numerics. The logarithmic sum is kept only for [`TransformEngine::phi`].
//!
//! Matrix arguments are multiples of `Q`. With `Q_γ = -γQ`, a function of
//! `λ^n Q_γ` acts on the `j`-th spectral component through the scalar
//! `λ^n γ μ_j`.

use crate::error::{Error, Result};
use crate::innovations::{principal_log, Innovation, NegativePart};
use crate::phasetype::{resolvent_sum, CMatrix, CVector, PhaseTypeDist, SpectralData, POLE_GUARD};
use crate::C64;
use std::f64::consts::FRAC_PI_2;

/// Relative gap below which `λ^n μ_i` and `μ_j` count as colliding.
const SEPARATION_GAP: f64 = 1e-8;

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// `X_n = λ X_{n-1} + Z_n` with per-step discount `ρ`.
#[derive(Debug, Clone)]
pub struct Ar1Model {
    lambda: f64,
    rho: f64,
    inn: Innovation,
}

impl Ar1Model {
    pub fn new(lambda: f64, rho: f64, inn: Innovation) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::InvalidParameter(format!("lambda = {lambda} must lie in (0, 1)")));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidParameter(format!("rho = {rho} must lie in (0, 1)")));
        }
        check_separation(lambda, inn.s_part().spectral())?;
        Ok(Self { lambda, rho, inn })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn innovation(&self) -> &Innovation {
        &self.inn
    }

    pub fn s_part(&self) -> &PhaseTypeDist {
        self.inn.s_part()
    }

    pub fn t_part(&self) -> &NegativePart {
        self.inn.t_part()
    }

    pub fn spectral(&self) -> &SpectralData {
        self.inn.s_part().spectral()
    }

    pub fn dim(&self) -> usize {
        self.s_part().dim()
    }

    /// The same model with another discount factor.
    pub fn with_rho(&self, rho: f64) -> Result<Self> {
        Self::new(self.lambda, rho, self.inn.clone())
    }
}

/// `Sp(λ^n Q) ∩ Sp(Q) = ∅` for every `n ≥ 1`. Beyond the horizon where
/// `λ^n max|μ| < min|μ|` no collision is possible.
fn check_separation(lambda: f64, sd: &SpectralData) -> Result<()> {
    let mu = sd.mu();
    let lo = mu.iter().fold(f64::INFINITY, |a, z| a.min(z.norm()));
    let hi = sd.max_modulus();
    let mut ln = lambda;
    while ln * hi >= lo * (1.0 - SEPARATION_GAP) {
        for mi in mu {
            for mj in mu {
                if (mi * ln - mj).norm() <= SEPARATION_GAP * mj.norm() {
                    return Err(Error::Spectrum {
                        eigenvalue: -*mj,
                        reason: format!(
                            "lambda^n times the eigenvalue {} of Q coincides with an eigenvalue \
                             (n = {}); the spectra of lambda^n Q and Q must be disjoint",
                            -*mi,
                            (ln.ln() / lambda.ln()).round()
                        ),
                    });
                }
            }
        }
        ln *= lambda;
    }
    Ok(())
}

/// A truncated series with its error estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Series<T> {
    pub value: T,
    pub error: f64,
    pub terms: usize,
}

/// `φ(u)` with truncation data.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiValue {
    pub value: C64,
    pub error: f64,
    pub terms: usize,
    /// Indices `k` where the principal branch of `ψ(λ^k u)` jumped by more
    /// than `π/2` in imaginary part relative to term `k - 1`.
    pub branch_jumps: Vec<usize>,
}

/// Evaluates the series objects of a model.
#[derive(Debug, Clone)]
pub struct TransformEngine {
    model: Ar1Model,
    tol: f64,
    max_terms: usize,
    /// `e^{-φ(λ^n μ_j)}` for `n = 1..`, one row per eigenvalue.
    ladders: Vec<Vec<C64>>,
}

impl TransformEngine {
    pub const DEFAULT_TOL: f64 = 1e-12;
    pub const DEFAULT_MAX_TERMS: usize = 10_000;

    pub fn new(model: Ar1Model) -> Result<Self> {
        Self::with_tolerance(model, Self::DEFAULT_TOL, Self::DEFAULT_MAX_TERMS)
    }

    pub fn with_tolerance(model: Ar1Model, tol: f64, max_terms: usize) -> Result<Self> {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(Error::InvalidParameter(format!("tolerance {tol} must be positive")));
        }
        if max_terms == 0 {
            return Err(Error::InvalidParameter("max_terms must be positive".into()));
        }
        let mut engine = Self {
            model,
            tol,
            max_terms,
            ladders: Vec::new(),
        };
        engine.ladders = engine.build_ladders()?;
        Ok(engine)
    }

    fn build_ladders(&self) -> Result<Vec<Vec<C64>>> {
        let rho = self.model.rho;
        let lambda = self.model.lambda;
        let mut out = Vec::new();
        for &mu in self.model.spectral().mu() {
            let mut ladder = self.fresh_ladder(mu)?;
            let mut row = vec![ladder.value];
            let mut rho_n = 1.0;
            let mut lam_n = lambda;
            while (rho_n > self.tol * 1e-3 || lam_n * mu.norm() > 1e-3) && row.len() < self.max_terms {
                ladder.advance()?;
                row.push(ladder.value);
                rho_n *= rho;
                lam_n *= lambda;
            }
            out.push(row);
        }
        Ok(out)
    }

    pub fn model(&self) -> &Ar1Model {
        &self.model
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn max_terms(&self) -> usize {
        self.max_terms
    }

    /// `E(e^{uZ}) = e^{ψ(u)}`, with the pole at `Sp(-Q)` reported.
    pub fn z_transform(&self, u: C64) -> Result<C64> {
        self.model.inn.transform(u)
    }

    /// `e^{φ(u)} = Π_{k≥0} E(e^{λ^k u Z})`.
    pub fn exp_phi(&self, u: C64) -> Result<C64> {
        let lambda = self.model.lambda;
        let mut prod = c(1.0);
        let mut arg = u;
        for k in 0..self.max_terms {
            let factor = self.z_transform(arg).map_err(|e| tag_term(e, k, "φ"))?;
            prod *= factor;
            if (factor - 1.0).norm() < self.tol * (1.0 - lambda) {
                return Ok(prod);
            }
            arg *= lambda;
        }
        Err(Error::NonConvergence {
            what: "product for exp(phi)",
            terms: self.max_terms,
        })
    }

    /// `φ(u) = Σ_{k≥0} ψ(λ^k u)` on principal branches.
    pub fn phi(&self, u: C64) -> Result<PhiValue> {
        let lambda = self.model.lambda;
        let mut sum = c(0.0);
        let mut arg = u;
        let mut prev: Option<C64> = None;
        let mut jumps = Vec::new();
        for k in 0..self.max_terms {
            let term = self.model.inn.psi(arg).map_err(|e| tag_term(e, k, "φ"))?;
            if let Some(p) = prev {
                if (term.im - p.im).abs() > FRAC_PI_2 {
                    jumps.push(k);
                }
            }
            sum += term;
            if term.norm() < self.tol * (1.0 - lambda) {
                return Ok(PhiValue {
                    value: sum,
                    error: term.norm() * lambda / (1.0 - lambda),
                    terms: k + 1,
                    branch_jumps: jumps,
                });
            }
            prev = Some(term);
            arg *= lambda;
        }
        Err(Error::NonConvergence {
            what: "series for phi",
            terms: self.max_terms,
        })
    }

    fn fresh_ladder(&self, v: C64) -> Result<PhiLadder<'_>> {
        let start = self.exp_phi(v * self.model.lambda)?;
        Ok(PhiLadder {
            engine: self,
            v,
            n: 1,
            lam_n: self.model.lambda,
            value: 1.0 / start,
            cached: None,
        })
    }

    /// Iterator over `e^{-φ(λ^n v)}`, `n = 1, 2, ...`.
    pub(crate) fn ladder(&self, v: C64) -> Result<PhiLadder<'_>> {
        if let Some(j) = self.model.spectral().mu().iter().position(|&m| m == v) {
            if let Some(row) = self.ladders.get(j) {
                return Ok(PhiLadder {
                    engine: self,
                    v,
                    n: 1,
                    lam_n: self.model.lambda,
                    value: row[0],
                    cached: Some(row),
                });
            }
        }
        self.fresh_ladder(v)
    }

    /// `Σ_{n≥1} w(λ^n v) e^{-φ(λ^n v)} ρ^{n-1}`.
    ///
    /// Terms are summed at least until `λ^n |v| reach ≤ 1e-3`, after which they
    /// behave like `w(0) ρ^{n-1}`; the geometric tail of the last term is the
    /// reported error.
    pub(crate) fn ladder_sum<F>(&self, v: C64, reach: f64, mut w: F) -> Result<Series<C64>>
    where
        F: FnMut(C64) -> Result<C64>,
    {
        let rho = self.model.rho;
        let reach = reach.max(1.0);
        let mut ladder = self.ladder(v)?;
        let mut sum = c(0.0);
        let mut rho_n = 1.0;
        for n in 1..=self.max_terms {
            let arg = v * ladder.lam_n;
            let term = w(arg)? * ladder.value * rho_n;
            sum += term;
            let tail = 2.0 * term.norm() * rho / (1.0 - rho);
            if ladder.lam_n * v.norm() * reach <= 1e-3 && tail < self.tol {
                return Ok(Series {
                    value: sum,
                    error: tail,
                    terms: n,
                });
            }
            ladder.advance()?;
            rho_n *= rho;
        }
        Err(Error::NonConvergence {
            what: "series over lambda^n",
            terms: self.max_terms,
        })
    }

    /// Scalar component `F_j(x, γ) = Σ_{n≥1} e^{x λ^n γ μ_j - φ(λ^n γ μ_j)} ρ^{n-1}`.
    pub fn f_gamma_scalar(&self, j: usize, x: f64, gamma: C64) -> Result<Series<C64>> {
        let v = self.model.spectral().mu()[j] * gamma;
        self.ladder_sum(v, x.abs(), |arg| Ok((arg * x).exp()))
    }

    /// `f_γ(x) = Σ_{n≥1} e^{x λ^n Q_γ - φ(λ^n Q_γ)} ρ^{n-1}`.
    pub fn f_gamma(&self, x: f64, gamma: C64) -> Result<Series<CMatrix>> {
        let sd = self.model.spectral();
        let mut error = 0.0f64;
        let mut terms = 0;
        let value = sd.apply_indexed(|j| {
            let s = self.f_gamma_scalar(j, x, gamma)?;
            error = error.max(s.error);
            terms = terms.max(s.terms);
            Ok(s.value)
        })?;
        Ok(Series { value, error, terms })
    }

    /// `α_δ = ρ α (-δI - Q)^{-1} e^{(δI + Q) b} E(e^{QT})` as a row vector.
    pub fn alpha_delta(&self, delta: C64, b: f64) -> Result<CVector> {
        let sd = self.model.spectral();
        let m = sd.dim();
        let alpha = self.model.s_part().alpha().map(c);
        let mut row = CVector::zeros(m);
        for (j, (p, &mu)) in sd.projectors().iter().zip(sd.mu()).enumerate() {
            let gap = mu - delta;
            if gap.norm() <= POLE_GUARD * mu.norm().max(1.0) {
                return Err(Error::Pole {
                    at: delta,
                    eigenvalue: mu,
                    context: format!(" (alpha_delta, component {j})"),
                });
            }
            let scale = ((delta - mu) * b).exp() * self.model.t_part().laplace(mu)? / gap;
            row += p.tr_mul(&alpha) * scale;
        }
        Ok(row * c(self.model.rho))
    }

    /// `h_{γ,δ}(x) = e^{δx} 1{x ≥ b} + α_δ e^{φ(λQ_γ)} f_γ(x) q`, assembled
    /// with explicit matrix products.
    pub fn h_func(&self, x: f64, delta: C64, gamma: C64, b: f64) -> Result<C64> {
        let sd = self.model.spectral();
        let lambda = self.model.lambda;
        let row = self.alpha_delta(delta, b)?;
        let e_phi = sd.apply(-gamma, |v| self.exp_phi(v * lambda))?;
        let f = self.f_gamma(x, gamma)?.value;
        let q = self.model.s_part().exit_vector().map(c);
        let series = (row.transpose() * e_phi * f * q)[(0, 0)];
        let jump = if x >= b { (delta * x).exp() } else { c(0.0) };
        Ok(jump + series)
    }

    /// `e_i(-uI - Q)^{-1} q`, the transform of `PH(Q, e_i)`.
    pub fn laplace_i(&self, i: usize, u: C64) -> Result<C64> {
        let sd = self.model.spectral();
        let m = sd.dim();
        if i >= m {
            return Err(Error::InvalidParameter(format!("phase {i} out of range 0..{m}")));
        }
        let weights: Vec<C64> = sd.exit_parts().iter().map(|pq| pq[i]).collect();
        resolvent_sum(sd.mu(), &weights, u, POLE_GUARD)
    }

    /// `ψ^i(u) = log(e_i(-uI - Q)^{-1} q)` on the principal branch.
    pub fn psi_i(&self, i: usize, u: C64) -> Result<C64> {
        principal_log(u, self.laplace_i(i, u)?)
    }

    /// `S_{γ,i}` component: `Σ_{n≥1} e^{b λ^n γ μ_j - φ(λ^n γ μ_j)} e^{ψ^i(λ^n γ μ_j)} ρ^n`.
    pub(crate) fn restart_series(&self, j: usize, i: usize, gamma: C64, b: f64) -> Result<Series<C64>> {
        let v = self.model.spectral().mu()[j] * gamma;
        let rho = self.model.rho;
        let s = self.ladder_sum(v, b.abs(), |arg| Ok((arg * b).exp() * self.laplace_i(i, arg)?))?;
        Ok(Series {
            value: s.value * rho,
            error: s.error * rho,
            terms: s.terms,
        })
    }

    /// `η_{γ,δ,i} = e^{δb} α_{γ,i} (-δI - Q)^{-1} q` with
    /// `α_{γ,i} = e_i + α e^{Qb + ψ₂(-Q) + φ(λQ_γ)} S_{γ,i}`.
    pub fn eta(&self, delta: C64, i: usize, gamma: C64, b: f64) -> Result<C64> {
        let sd = self.model.spectral();
        let m = sd.dim();
        if i >= m {
            return Err(Error::InvalidParameter(format!("phase {i} out of range 0..{m}")));
        }
        let lambda = self.model.lambda;
        let t = self.model.t_part();
        let k = sd.apply_indexed(|j| {
            let mu = sd.mu()[j];
            Ok((-mu * b).exp() * t.laplace(mu)? * self.exp_phi(mu * gamma * lambda)?)
        })?;
        let s = sd.apply_indexed(|j| Ok(self.restart_series(j, i, gamma, b)?.value))?;
        let alpha = self.model.s_part().alpha().map(c);
        let mut row = (alpha.transpose() * k * s).transpose();
        row[i] += 1.0;

        let q_c = self.model.s_part().generator().map(c);
        let shifted = -(CMatrix::identity(m, m) * delta) - q_c;
        let exit = self.model.s_part().exit_vector().map(c);
        let y = shifted.lu().solve(&exit).ok_or_else(|| Error::Pole {
            at: delta,
            eigenvalue: delta,
            context: " (eta resolvent is singular)".into(),
        })?;
        Ok((delta * b).exp() * row.dot(&y))
    }
}

/// Walks `e^{-φ(λ^n v)}` by `e^{-φ(λ^{n+1} v)} = e^{-φ(λ^n v)} E(e^{λ^n v Z})`.
pub(crate) struct PhiLadder<'a> {
    engine: &'a TransformEngine,
    v: C64,
    n: usize,
    lam_n: f64,
    value: C64,
    cached: Option<&'a [C64]>,
}

impl PhiLadder<'_> {
    pub(crate) fn value(&self) -> C64 {
        self.value
    }

    pub(crate) fn advance(&mut self) -> Result<()> {
        let next = match self.cached.and_then(|row| row.get(self.n)) {
            Some(&v) => v,
            None => {
                let factor = self
                    .engine
                    .z_transform(self.v * self.lam_n)
                    .map_err(|e| tag_term(e, self.n, "the phi ladder"))?;
                self.value * factor
            }
        };
        self.value = next;
        self.n += 1;
        self.lam_n *= self.engine.model.lambda;
        Ok(())
    }
}

fn tag_term(e: Error, k: usize, what: &str) -> Error {
    match e {
        Error::Pole {
            at,
            eigenvalue,
            context,
        } => Error::Pole {
            at,
            eigenvalue,
            context: format!("{context} (term k = {k} of {what})"),
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qseries::euler_function;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn exp_engine(mu: f64, lambda: f64, rho: f64, t: NegativePart) -> TransformEngine {
        let inn = Innovation::new(PhaseTypeDist::exponential(mu).unwrap(), t).unwrap();
        TransformEngine::new(Ar1Model::new(lambda, rho, inn).unwrap()).unwrap()
    }

    fn m2_engine(t: NegativePart, gamma_lambda: f64) -> TransformEngine {
        let s = PhaseTypeDist::from_rows(&[&[-2.0, 1.0], &[0.0, -3.0]], &[0.5, 0.5]).unwrap();
        let inn = Innovation::new(s, t).unwrap();
        TransformEngine::new(Ar1Model::new(gamma_lambda, 0.6, inn).unwrap()).unwrap()
    }

    #[test]
    fn model_validation() {
        let inn = Innovation::new(PhaseTypeDist::exponential(1.0).unwrap(), NegativePart::Zero).unwrap();
        assert!(Ar1Model::new(1.0, 0.5, inn.clone()).is_err());
        assert!(Ar1Model::new(0.5, 0.0, inn.clone()).is_err());
        // μ = (1, 2) with λ = 1/2 gives λ·2 = 1
        let s = PhaseTypeDist::hyperexponential(&[1.0, 2.0], &[0.5, 0.5]).unwrap();
        let inn = Innovation::new(s, NegativePart::Zero).unwrap();
        assert!(matches!(
            Ar1Model::new(0.5, 0.5, inn.clone()),
            Err(Error::Spectrum { .. })
        ));
        assert!(Ar1Model::new(0.3, 0.5, inn).is_ok());
        // λ² · 4 = 1
        let s = PhaseTypeDist::hyperexponential(&[1.0, 4.0], &[0.5, 0.5]).unwrap();
        let inn = Innovation::new(s, NegativePart::Zero).unwrap();
        assert!(matches!(Ar1Model::new(0.5, 0.5, inn), Err(Error::Spectrum { .. })));
    }

    #[test]
    fn phi_examples() {
        let e = exp_engine(1.0, 0.5, 0.5, NegativePart::Zero);
        assert_eq!(e.phi(c(0.0)).unwrap().value, c(0.0));
        let v = e.phi(c(0.5)).unwrap().value.exp();
        // 1/φ_e(1/2), frozen from a 30-digit evaluation
        assert!((v - 3.462_746_619_455_063_6).norm() < 1e-11);
        assert!((v.re - 1.0 / euler_function(0.5).unwrap()).abs() < 1e-11);
        assert!((e.exp_phi(c(0.5)).unwrap() - v).norm() < 1e-11);
        // e^{φ(λ^n μ)} = (λ;λ)_{n-1}/φ_e(λ)
        let mut ladder = e.ladder(c(1.0)).unwrap();
        for n in 1..8 {
            let expected = crate::qseries::q_pochhammer(0.5, 0.5, n - 1) / euler_function(0.5).unwrap();
            assert!((1.0 / ladder.value() - expected).norm() < 1e-12 * expected, "n = {n}");
            ladder.advance().unwrap();
        }
    }

    #[test]
    fn phi_functional_equation() {
        let e = m2_engine(NegativePart::Exponential { rate: 1.5 }, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let u = C64::new(rng.random_range(0.0..1.8), rng.random_range(-1.0..1.0));
            let lhs = e.phi(u).unwrap().value - e.phi(u * 0.5).unwrap().value;
            let rhs = e.model().innovation().psi(u).unwrap();
            assert!((lhs - rhs).norm() < 1e-10, "u = {u}");
        }
    }

    #[test]
    fn phi_pole_names_term() {
        let e = exp_engine(1.0, 0.5, 0.5, NegativePart::Zero);
        // ψ(4) = log(-1/3) sits on the branch cut
        assert!(matches!(e.phi(c(4.0)), Err(Error::Branch { .. })));
        match e.exp_phi(c(4.0)) {
            Err(Error::Pole { context, .. }) => assert!(context.contains("k = 2"), "{context}"),
            other => panic!("expected a pole error, got {other:?}"),
        }
    }

    #[test]
    fn f_gamma_matches_scalar_series() {
        let (mu, lambda, rho) = (1.3, 0.4, 0.7);
        let e = exp_engine(mu, lambda, rho, NegativePart::PointMass { d: 0.3 });
        let x = 0.8;
        let got = e.f_gamma(x, c(1.0)).unwrap().value[(0, 0)];
        // scalar re-implementation: e^{-φ(v)} = Π_k 1/E(e^{λ^k v Z})
        let lz = |u: f64| mu / (mu - u) * (-u * 0.3).exp();
        let mut sum = 0.0;
        for n in 1..200 {
            let v = lambda.powi(n) * mu;
            let mut ephi = 1.0;
            for k in 0..200 {
                ephi *= lz(lambda.powi(k) * v);
            }
            sum += (x * v).exp() / ephi * rho.powi(n - 1);
        }
        assert!((got.re - sum).abs() < 1e-12 * sum, "{got} vs {sum}");
        assert!(got.im.abs() < 1e-14);
    }

    #[test]
    fn f_gamma_commutes_and_tail_is_geometric() {
        let e = m2_engine(NegativePart::Exponential { rate: 2.0 }, 0.5);
        let f = e.f_gamma(0.3, c(1.0)).unwrap();
        let q = e.model().s_part().generator().map(c);
        let comm = &f.value * &q - &q * &f.value;
        assert!(comm.iter().all(|z| z.norm() < 1e-9));
        // halving tol moves the value by less than the old error estimate
        let fine = TransformEngine::with_tolerance(e.model().clone(), 5e-13, 10_000).unwrap();
        let g = fine.f_gamma(0.3, c(1.0)).unwrap();
        let diff = (&g.value - &f.value).iter().fold(0.0f64, |a, z| a.max(z.norm()));
        assert!(diff <= f.error.max(1e-15), "{diff} vs {}", f.error);
        // terms bounded by C ρ^{n-1}
        let mut ladder = e.ladder(e.model().spectral().mu()[0]).unwrap();
        let mut bound = 0.0f64;
        for n in 1..60 {
            let mag = ladder.value().norm();
            bound = bound.max(mag);
            assert!(mag * 0.6f64.powi(n - 1) <= bound * 0.6f64.powi(n - 1) + 1e-300);
            ladder.advance().unwrap();
        }
        assert!(bound.is_finite());
    }

    #[test]
    fn harmonicity_of_f_gamma() {
        let e = m2_engine(NegativePart::Exponential { rate: 2.0 }, 0.5);
        let (x, lambda, rho) = (0.3, 0.5, 0.6);
        let lhs: CMatrix = e
            .model()
            .innovation()
            .expectation(|z| e.f_gamma(lambda * x + z, c(1.0)).unwrap().value, &[], 1e-11)
            .unwrap()
            * c(rho);
        let sd = e.model().spectral();
        let corr = sd
            .apply(c(-1.0), |v| Ok((v * lambda * x).exp() / e.exp_phi(v * lambda)?))
            .unwrap();
        let rhs = e.f_gamma(x, c(1.0)).unwrap().value - corr;
        let diff = (&lhs - &rhs).iter().fold(0.0f64, |a, z| a.max(z.norm()));
        assert!(diff < 1e-6, "{diff}");
    }

    #[test]
    fn alpha_delta_scalar_tail() {
        let (mu, rho, lambda, b) = (1.5, 0.5, 0.5, 1.0);
        let e = exp_engine(mu, lambda, rho, NegativePart::Zero);
        let a = e.alpha_delta(c(0.0), b).unwrap();
        for x in [-1.0, 0.0, 0.5] {
            let got = a[0] * (mu * lambda * x).exp() * mu;
            let tail = rho * (-mu * (b - lambda * x)).exp();
            assert!((got - tail).norm() < 1e-14);
        }
        assert!(matches!(e.alpha_delta(c(mu), b), Err(Error::Pole { .. })));
    }

    #[test]
    fn alpha_delta_quadrature_identity() {
        let e = m2_engine(NegativePart::Exponential { rate: 2.0 }, 0.5);
        let (x, b, delta, lambda, rho) = (0.2, 1.0, 0.1, 0.5, 0.6);
        let y0 = lambda * x;
        let lhs: f64 = e
            .model()
            .innovation()
            .expectation(
                |z| if y0 + z >= b { (delta * (y0 + z)).exp() } else { 0.0 },
                &[b - y0],
                1e-12,
            )
            .unwrap()
            * rho;
        let row = e.alpha_delta(c(delta), b).unwrap();
        let sd = e.model().spectral();
        let m = sd.apply(c(-lambda * x), |v| Ok(v.exp())).unwrap();
        let q = e.model().s_part().exit_vector().map(c);
        let rhs = (row.transpose() * m * q)[(0, 0)];
        assert!((lhs - rhs.re).abs() < 1e-6 && rhs.im.abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn h_func_scalar_display() {
        let (mu, rho, lambda, b) = (1.0, 0.5, 0.5, 1.0);
        let e = exp_engine(mu, lambda, rho, NegativePart::Zero);
        for x in [-0.5, 0.2, 0.9] {
            let got = e.h_func(x, c(0.0), c(1.0), b).unwrap();
            let pre = (-mu * b).exp() * e.exp_phi(c(lambda * mu)).unwrap();
            let mut ladder = e.ladder(c(mu)).unwrap();
            let mut sum = c(0.0);
            for n in 1..120 {
                sum += (c(lambda.powi(n) * mu * x)).exp() * ladder.value() * rho.powi(n);
                ladder.advance().unwrap();
            }
            assert!((got - pre * sum).norm() < 1e-12, "{got} vs {}", pre * sum);
        }
        // indicator active above b
        let above = e.h_func(2.0, c(0.3), c(1.0), b).unwrap();
        let series = above - (c(0.3) * 2.0).exp();
        assert!(series.norm() < above.norm());
    }

    #[test]
    fn h_func_discrete_harmonic_balance() {
        let e = m2_engine(NegativePart::Exponential { rate: 2.0 }, 0.5);
        let (x, b, delta, gamma, lambda, rho) = (0.2, 1.0, 0.1, c(0.5), 0.5, 0.6);
        let y0 = lambda * x;
        let lhs: f64 = e
            .model()
            .innovation()
            .expectation(|z| e.h_func(y0 + z, c(delta), gamma, b).unwrap().re, &[b - y0], 1e-11)
            .unwrap()
            * rho
            - e.h_func(x, c(delta), gamma, b).unwrap().re;
        let row = e.alpha_delta(c(delta), b).unwrap();
        let sd = e.model().spectral();
        let q = e.model().s_part().exit_vector().map(c);
        let a = (row.transpose() * sd.apply(c(-lambda * x), |v| Ok(v.exp())).unwrap() * &q)[(0, 0)];
        let g = (row.transpose() * sd.apply(-gamma * lambda * x, |v| Ok(v.exp())).unwrap() * &q)[(0, 0)];
        assert!((lhs - (a - g).re).abs() < 1e-6, "{lhs} vs {}", a - g);
    }

    #[test]
    fn psi_i_cases() {
        let e = m2_engine(NegativePart::Zero, 0.5);
        assert!(e.psi_i(0, c(0.0)).unwrap().norm() < 1e-14);
        let u = 0.3;
        let q = e.model().s_part().generator().map(c);
        let shifted = -(CMatrix::identity(2, 2) * c(u)) - q;
        let inv = shifted.try_inverse().unwrap();
        let exit = e.model().s_part().exit_vector().map(c);
        let direct = inv * exit;
        // frozen: [1.241830065359477, 1.111111111111111]
        for i in 0..2 {
            let got = e.psi_i(i, c(u)).unwrap().exp();
            assert!((got - direct[i]).norm() < 1e-12);
        }
        assert!((direct[0].re - 1.241_830_065_359_477).abs() < 1e-12);
        let one = exp_engine(2.0, 0.5, 0.5, NegativePart::Zero);
        let z = C64::new(0.4, 0.2);
        assert!((one.psi_i(0, z).unwrap() - one.model().innovation().psi1(z).unwrap()).norm() < 1e-15);
    }

    #[test]
    fn eta_scalar_reduction() {
        let (mu, rho, lambda, b) = (1.0, 0.5, 0.5, 0.8);
        let t = NegativePart::Exponential { rate: 2.0 };
        let e = exp_engine(mu, lambda, rho, t);
        let got = e.eta(c(0.0), 0, c(1.0), b).unwrap();
        // e^{ψ₂(μ) - μb + φ(λμ)} Σ_{n≥0} e^{λ^n μ b - φ(λ^{n+1} μ) - ψ₂(λ^n μ)} ρ^n
        let pre = t.laplace(c(mu)).unwrap() * (-mu * b).exp() * e.exp_phi(c(lambda * mu)).unwrap();
        let mut ladder = e.ladder(c(mu)).unwrap();
        let mut sum = c(0.0);
        for n in 0..150 {
            let v = lambda.powi(n) * mu;
            sum += (c(v * b)).exp() * ladder.value() / t.laplace(c(v)).unwrap() * rho.powi(n);
            ladder.advance().unwrap();
        }
        assert!((got - pre * sum).norm() < 1e-11, "{got} vs {}", pre * sum);
    }

    #[test]
    fn eta_is_expected_h_at_restart() {
        let e = m2_engine(NegativePart::Exponential { rate: 2.0 }, 0.5);
        let (b, delta) = (1.0, 0.1);
        for i in 0..2 {
            let ri = e.model().s_part().started_in(i).unwrap();
            let quad = crate::quadrature::integrate_to_infinity(
                |r| {
                    let p = ri.pdf(r);
                    if p == 0.0 {
                        0.0
                    } else {
                        e.h_func(b + r, c(delta), c(1.0), b).unwrap().re * p
                    }
                },
                0.0,
                1e-11,
            )
            .unwrap();
            let eta = e.eta(c(delta), i, c(1.0), b).unwrap();
            assert!((eta.re - quad).abs() < 1e-6 && eta.im.abs() < 1e-9, "{eta} vs {quad}");
        }
    }
}
