//! Innovations `Z = S - T` with `S ~ PH(Q, α)` and an independent `T ≥ 0`.
//!
//! `T` is restricted to laws with closed-form Laplace transforms so that the
//! matrix `E(e^{QT})` can be evaluated spectrally. Every supported variant has
//! `E log(1 + |Z|) < ∞`, so the AR(1) recursion always has a stationary limit.

use crate::error::{Error, Result};
use crate::phasetype::{CMatrix, PhaseTypeDist, SpectralData};
use crate::quadrature::{integrate_piecewise_to_infinity, integrate_to_infinity_generic, QuadValue, Weighted};
use crate::C64;
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

/// Law of the negative part `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NegativePart {
    Zero,
    PointMass {
        d: f64,
    },
    Exponential {
        rate: f64,
    },
    /// Gamma law with integer shape (Erlang).
    GammaInt {
        shape: u32,
        rate: f64,
    },
}

impl NegativePart {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            NegativePart::Zero => true,
            NegativePart::PointMass { d } => d.is_finite() && d >= 0.0,
            NegativePart::Exponential { rate } => rate.is_finite() && rate > 0.0,
            NegativePart::GammaInt { shape, rate } => shape >= 1 && rate.is_finite() && rate > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("negative part {self:?} out of range")))
        }
    }

    /// `E(e^{-uT})`, the multiplicative form of `exp(ψ₂(u))`.
    pub fn laplace(&self, u: C64) -> Result<C64> {
        let one = C64::new(1.0, 0.0);
        match *self {
            NegativePart::Zero => Ok(one),
            NegativePart::PointMass { d } => Ok((-u * d).exp()),
            NegativePart::Exponential { rate } => {
                let den = u + rate;
                if den.norm() <= 1e-14 * rate {
                    return Err(Error::Domain(format!("u = {u} is the pole -{rate} of the T transform")));
                }
                Ok(rate / den)
            }
            NegativePart::GammaInt { shape, rate } => {
                let den = u + rate;
                if den.norm() <= 1e-14 * rate {
                    return Err(Error::Domain(format!("u = {u} is the pole -{rate} of the T transform")));
                }
                Ok((C64::new(rate, 0.0) / den).powu(shape))
            }
        }
    }

    /// `ψ₂(u) = log E(e^{-uT})`.
    pub fn log_laplace(&self, u: C64) -> Result<C64> {
        match *self {
            NegativePart::Zero => Ok(C64::new(0.0, 0.0)),
            NegativePart::PointMass { d } => Ok(-u * d),
            NegativePart::Exponential { .. } => Ok(self.laplace(u)?.ln()),
            NegativePart::GammaInt { shape, rate } => {
                self.laplace(u)?;
                Ok((C64::new(rate, 0.0) / (u + rate)).ln() * shape as f64)
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            NegativePart::Zero => 0.0,
            NegativePart::PointMass { d } => d,
            NegativePart::Exponential { rate } => 1.0 / rate,
            NegativePart::GammaInt { shape, rate } => shape as f64 / rate,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            NegativePart::Zero => 0.0,
            NegativePart::PointMass { d } => d,
            NegativePart::Exponential { rate } => rng.sample::<f64, _>(Exp1) / rate,
            NegativePart::GammaInt { shape, rate } => {
                (0..shape).map(|_| rng.sample::<f64, _>(Exp1)).sum::<f64>() / rate
            }
        }
    }

    /// `E f(T)` by quadrature (exact for the atomic variants).
    pub fn expectation<V, F>(&self, mut f: F, tol: f64) -> Result<V>
    where
        V: QuadValue,
        F: FnMut(f64) -> Result<V>,
    {
        match *self {
            NegativePart::Zero => f(0.0),
            NegativePart::PointMass { d } => f(d),
            NegativePart::Exponential { rate } => {
                let mut w = Weighted::new();
                integrate_fallible(|t| w.try_eval(rate * (-rate * t).exp(), || f(t)), tol)
            }
            NegativePart::GammaInt { shape, rate } => {
                let norm: f64 = (1..shape).map(f64::from).product();
                let mut w = Weighted::new();
                integrate_fallible(
                    |t| {
                        let dens = rate * (rate * t).powi(shape as i32 - 1) * (-rate * t).exp() / norm;
                        w.try_eval(dens, || f(t))
                    },
                    tol,
                )
            }
        }
    }
}

fn integrate_fallible<V, F>(mut f: F, tol: f64) -> Result<V>
where
    V: QuadValue,
    F: FnMut(f64) -> Result<V>,
{
    let mut failure = None;
    let mut template: Option<V> = None;
    let v = integrate_to_infinity_generic(
        |t| match f(t) {
            Ok(v) => {
                if template.is_none() {
                    template = Some(v.scaled(0.0));
                }
                v
            }
            Err(e) => {
                failure.get_or_insert(e);
                template.clone().expect("integrand failed before producing a value")
            }
        },
        0.0,
        tol,
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(v),
    }
}

/// Innovation law `Z = S - T`.
#[derive(Debug, Clone)]
pub struct Innovation {
    s_part: PhaseTypeDist,
    t_part: NegativePart,
}

impl Innovation {
    pub fn new(s_part: PhaseTypeDist, t_part: NegativePart) -> Result<Self> {
        t_part.validate()?;
        Ok(Self { s_part, t_part })
    }

    pub fn s_part(&self) -> &PhaseTypeDist {
        &self.s_part
    }

    pub fn t_part(&self) -> &NegativePart {
        &self.t_part
    }

    /// `ψ₁(u) = log α(-uI - Q)^{-1} q` on the principal branch.
    pub fn psi1(&self, u: C64) -> Result<C64> {
        principal_log(u, self.s_part.laplace(u)?)
    }

    /// `ψ₂(u) = log E(e^{-uT})`.
    pub fn psi2(&self, u: C64) -> Result<C64> {
        self.t_part.log_laplace(u)
    }

    /// `ψ(u) = ψ₁(u) + ψ₂(u)`.
    pub fn psi(&self, u: C64) -> Result<C64> {
        Ok(self.psi1(u)? + self.psi2(u)?)
    }

    /// `e^{ψ(u)}` computed as a product, without any logarithm.
    pub fn transform(&self, u: C64) -> Result<C64> {
        Ok(self.s_part.laplace(u)? * self.t_part.laplace(u)?)
    }

    /// `E(e^{QT}) = Σ_j E(e^{-μ_j T}) P_j`, i.e. `e^{ψ₂(-Q)}`.
    pub fn t_laplace_matrix(&self, sd: &SpectralData) -> Result<CMatrix> {
        sd.apply_indexed(|j| self.t_part.laplace(sd.mu()[j]))
    }

    pub fn mean(&self) -> f64 {
        self.s_part.mean() - self.t_part.mean()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.s_part.sample(rng).lifetime - self.t_part.sample(rng)
    }

    /// `E f(Z)` by nested quadrature over `S` and `T`.
    ///
    /// `breaks` are points in `z` where `f` is not smooth (indicators, kinks);
    /// the `S`-integral is split there.
    pub fn expectation<V, F>(&self, mut f: F, breaks: &[f64], tol: f64) -> Result<V>
    where
        V: QuadValue,
        F: FnMut(f64) -> V,
    {
        let s = &self.s_part;
        self.t_part.expectation(
            |t| {
                let shifted: Vec<f64> = breaks.iter().map(|z| z + t).collect();
                let mut w = Weighted::new();
                integrate_piecewise_to_infinity(|x| w.eval(s.pdf(x), || f(x - t)), 0.0, &shifted, tol)
            },
            tol,
        )
    }
}

/// Principal logarithm of a transform value, refusing the branch cut.
pub(crate) fn principal_log(at: C64, value: C64) -> Result<C64> {
    if value.re <= 0.0 && value.im.abs() <= 1e-14 * value.norm() {
        return Err(Error::Branch { at, value });
    }
    Ok(value.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn exp_innovation(rate: f64, t: NegativePart) -> Innovation {
        Innovation::new(PhaseTypeDist::exponential(rate).unwrap(), t).unwrap()
    }

    #[test]
    fn psi1_examples() {
        let inn = exp_innovation(2.0, NegativePart::Zero);
        assert_eq!(inn.psi1(c(0.0)).unwrap(), c(0.0));
        assert!((inn.psi1(c(1.0)).unwrap() - c(2f64.ln())).norm() < 1e-15);
        assert!(matches!(inn.psi1(c(2.0)), Err(Error::Pole { .. })));
        // transform is -2 at u = 3: on the branch cut
        assert!(matches!(inn.psi1(c(3.0)), Err(Error::Branch { .. })));
    }

    #[test]
    fn psi2_examples() {
        let u = C64::new(0.7, 0.3);
        assert_eq!(NegativePart::Zero.log_laplace(u).unwrap(), c(0.0));
        assert_eq!(NegativePart::PointMass { d: 1.0 }.log_laplace(c(1.0)).unwrap(), c(-1.0));
        let v = NegativePart::Exponential { rate: 2.0 }.log_laplace(c(2.0)).unwrap();
        assert!((v - c(0.5f64.ln())).norm() < 1e-15);
        let g = NegativePart::GammaInt { shape: 3, rate: 2.0 }
            .log_laplace(c(2.0))
            .unwrap();
        assert!((g - c(3.0 * 0.5f64.ln())).norm() < 1e-15);
        assert!(NegativePart::Exponential { rate: 2.0 }.laplace(c(-2.0)).is_err());
    }

    #[test]
    fn psi_sums_components() {
        let inn = exp_innovation(1.0, NegativePart::Exponential { rate: 2.0 });
        assert_eq!(inn.psi(c(0.0)).unwrap(), c(0.0));
        let zero_t = exp_innovation(1.0, NegativePart::Zero);
        let u = C64::new(0.3, 0.2);
        assert_eq!(zero_t.psi(u).unwrap(), zero_t.psi1(u).unwrap());
        let s = PhaseTypeDist::from_rows(&[&[-2.0, 1.0], &[0.0, -3.0]], &[0.5, 0.5]).unwrap();
        let inn = Innovation::new(s, NegativePart::GammaInt { shape: 2, rate: 1.5 }).unwrap();
        let bound = 0.9 * inn.s_part().spectral().min_decay();
        for k in 0..20 {
            let u = C64::new(bound * k as f64 / 20.0, 0.5 * ((k as f64) * 0.7).sin());
            let lhs = inn.psi(u).unwrap().exp();
            let rhs = inn.s_part().laplace(u).unwrap() * inn.psi2(u).unwrap().exp();
            assert!((lhs - rhs).norm() < 1e-12 * rhs.norm());
        }
    }

    #[test]
    fn psi_matches_monte_carlo_moment_generating_function() {
        let inn = exp_innovation(1.0, NegativePart::Exponential { rate: 2.0 });
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let u = 0.3;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let v = (u * inn.sample(&mut rng)).exp();
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        let exact = inn.psi(c(u)).unwrap().exp().re;
        assert!((mean - exact).abs() < 3.0 * se, "mc {mean} ± {se} vs {exact}");
    }

    #[test]
    fn t_laplace_matrix_cases() {
        let inn = exp_innovation(1.0, NegativePart::Zero);
        let sd = inn.s_part().spectral();
        assert!((inn.t_laplace_matrix(sd).unwrap()[(0, 0)] - c(1.0)).norm() < 1e-15);
        let inn = exp_innovation(1.0, NegativePart::PointMass { d: 2.0 });
        assert!((inn.t_laplace_matrix(sd).unwrap()[(0, 0)] - c((-2.0f64).exp())).norm() < 1e-15);
        let inn = exp_innovation(1.0, NegativePart::Exponential { rate: 1.0 });
        assert!((inn.t_laplace_matrix(sd).unwrap()[(0, 0)] - c(0.5)).norm() < 1e-15);
    }

    #[test]
    fn sampled_mean_and_log_moment() {
        let s = PhaseTypeDist::from_rows(&[&[-2.0, 1.0], &[0.0, -3.0]], &[0.5, 0.5]).unwrap();
        let inn = Innovation::new(s, NegativePart::GammaInt { shape: 2, rate: 4.0 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let zs: Vec<f64> = (0..n).map(|_| inn.sample(&mut rng)).collect();
        let mean = zs.iter().sum::<f64>() / n as f64;
        let var = zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - inn.mean()).abs() < 3.0 * (var / n as f64).sqrt());
        let log_moment = zs.iter().map(|z| (1.0 + z.abs()).ln()).sum::<f64>() / n as f64;
        assert!(log_moment.is_finite() && log_moment < 2.0);
    }

    #[test]
    fn quadrature_expectation_matches_transform() {
        let s = PhaseTypeDist::from_rows(&[&[-2.0, 1.0], &[0.0, -3.0]], &[0.5, 0.5]).unwrap();
        let inn = Innovation::new(s, NegativePart::Exponential { rate: 1.5 }).unwrap();
        let u = 0.4;
        let v: f64 = inn.expectation(|z| (u * z).exp(), &[], 1e-12).unwrap();
        assert!((v - inn.transform(c(u)).unwrap().re).abs() < 1e-9);
    }
}
