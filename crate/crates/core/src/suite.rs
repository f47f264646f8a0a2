//! Identity checks run by `ar1ph validate`, plus the reference models they use.

use crate::error::{Error, Result};
use crate::innovations::{Innovation, NegativePart};
use crate::passage::{
    closed_form_exp, closed_form_exp_general, derivative_identity_check, laplace_tau, PassageProblem, ResidueSystem,
};
use crate::phasetype::PhaseTypeDist;
use crate::qseries::q_binomial_residual;
use crate::transforms::{Ar1Model, TransformEngine};
use crate::C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// `S ~ Exp(μ)`, `T = 0`.
pub fn exponential_model(mu: f64, lambda: f64, rho: f64) -> Result<Ar1Model> {
    let inn = Innovation::new(PhaseTypeDist::exponential(mu)?, NegativePart::Zero)?;
    Ar1Model::new(lambda, rho, inn)
}

/// Two-phase example: `Q = [[-2, 1], [0, -3]]`, `α = (1/2, 1/2)`,
/// `T ~ Exp(2)`, `λ = 0.5`, `ρ = 0.6`.
pub fn two_phase_model() -> Result<Ar1Model> {
    let s = PhaseTypeDist::from_rows(&[&[-2.0, 1.0], &[0.0, -3.0]], &[0.5, 0.5])?;
    Ar1Model::new(0.5, 0.6, Innovation::new(s, NegativePart::Exponential { rate: 2.0 })?)
}

/// Hyperexponential example: rates `(1, 3)`, weights `(0.4, 0.6)`, `T = 0`,
/// `λ = ρ = 0.5`.
pub fn hyperexponential_model() -> Result<Ar1Model> {
    let s = PhaseTypeDist::hyperexponential(&[1.0, 3.0], &[0.4, 0.6])?;
    Ar1Model::new(0.5, 0.5, Innovation::new(s, NegativePart::Zero)?)
}

/// Names accepted by `--only`.
pub const CHECKS: [&str; 8] = [
    "phi_recursion",
    "qbinomial",
    "tail_identity",
    "f_harmonic",
    "h_balance",
    "m1_equivalence",
    "derivative",
    "residues",
];

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub residual: f64,
    pub tol: f64,
    pub detail: String,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.residual <= self.tol
    }
}

/// Options for [`run_suite`].
#[derive(Debug, Clone, Default)]
pub struct SuiteOptions {
    /// Model for the model-generic checks; the two-phase example when `None`.
    pub model: Option<Ar1Model>,
    /// Replaces every check's tolerance.
    pub tol_override: Option<f64>,
    pub only: Option<String>,
}

fn default_tol(name: &str) -> f64 {
    match name {
        "phi_recursion" | "qbinomial" | "m1_equivalence" => 1e-10,
        "derivative" => 1e-5,
        "residues" => 1e-9,
        _ => 1e-6,
    }
}

/// Run the selected checks. Numerical errors inside a check count as a
/// failure with an infinite residual.
pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<CheckResult>> {
    if let Some(only) = &opts.only {
        if !CHECKS.contains(&only.as_str()) {
            return Err(Error::InvalidParameter(format!(
                "unknown check '{only}'; expected one of {}",
                CHECKS.join(", ")
            )));
        }
    }
    let model = match &opts.model {
        Some(m) => m.clone(),
        None => two_phase_model()?,
    };
    let engine = TransformEngine::new(model)?;
    let mut out = Vec::new();
    for name in CHECKS {
        if opts.only.as_deref().is_some_and(|o| o != name) {
            continue;
        }
        let res = match name {
            "phi_recursion" => phi_recursion(&engine),
            "qbinomial" => qbinomial(),
            "tail_identity" => tail_identity(&engine),
            "f_harmonic" => f_harmonic(&engine),
            "h_balance" => h_balance(&engine),
            "m1_equivalence" => m1_equivalence(),
            "derivative" => derivative(),
            _ => residues(&engine),
        };
        let (residual, detail) = match res {
            Ok(v) => v,
            Err(e) => (f64::INFINITY, format!("error: {e}")),
        };
        out.push(CheckResult {
            name,
            residual,
            tol: opts.tol_override.unwrap_or_else(|| default_tol(name)),
            detail,
        });
    }
    Ok(out)
}

type Outcome = Result<(f64, String)>;

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

// distance from z to the lattice 2πi·ℤ
fn mod_2pi_i(z: C64) -> f64 {
    let k = (z.im / (2.0 * PI)).round();
    (z - C64::new(0.0, 2.0 * PI * k)).norm()
}

fn phi_recursion(e: &TransformEngine) -> Outcome {
    let lambda = e.model().lambda();
    let reach = 0.9 * e.model().spectral().min_decay();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let u = C64::new(rng.random_range(0.0..reach), rng.random_range(-1.0..1.0));
        let lhs = e.phi(u)?.value - e.phi(u * lambda)?.value;
        let rhs = e.model().innovation().psi(u)?;
        worst = worst.max(mod_2pi_i(lhs - rhs));
    }
    Ok((worst, "max |phi(u) - phi(lambda u) - psi(u)| over 50 points".into()))
}

fn qbinomial() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let z = rng.random_range(-0.9..0.9);
        let q = rng.random_range(-0.9..0.9);
        worst = worst.max(q_binomial_residual(z, q)?);
    }
    Ok((worst, "max relative residual over 20 (z, q) pairs".into()))
}

const HARM_X: f64 = 0.2;
const HARM_B: f64 = 1.0;

fn harm_delta(e: &TransformEngine) -> f64 {
    0.1 * e.model().spectral().min_decay().min(1.0)
}

fn exit(e: &TransformEngine) -> crate::phasetype::CVector {
    e.model().s_part().exit_vector().map(c)
}

// `E f(Z)` for fallible `f`; the first error wins
fn expect<V, F>(e: &TransformEngine, mut f: F, breaks: &[f64], fallback: V) -> Result<V>
where
    V: crate::quadrature::QuadValue,
    F: FnMut(f64) -> Result<V>,
{
    let mut failure = None;
    let v = e.model().innovation().expectation(
        |z| match f(z) {
            Ok(v) => v,
            Err(err) => {
                failure.get_or_insert(err);
                fallback.clone()
            }
        },
        breaks,
        1e-11,
    )?;
    match failure {
        Some(err) => Err(err),
        None => Ok(v),
    }
}

fn tail_identity(e: &TransformEngine) -> Outcome {
    let (lambda, rho) = (e.model().lambda(), e.model().rho());
    let delta = harm_delta(e);
    let y0 = lambda * HARM_X;
    let lhs: f64 = e.model().innovation().expectation(
        |z| {
            if y0 + z >= HARM_B {
                (delta * (y0 + z)).exp()
            } else {
                0.0
            }
        },
        &[HARM_B - y0],
        1e-12,
    )? * rho;
    let row = e.alpha_delta(c(delta), HARM_B)?;
    let m = e.model().spectral().apply(c(-lambda * HARM_X), |v| Ok(v.exp()))?;
    let rhs = (row.transpose() * m * exit(e))[(0, 0)];
    let res = (lhs - rhs.re).abs().max(rhs.im.abs());
    Ok((
        res,
        format!(
            "delta = {delta}, x = {HARM_X}, b = {HARM_B}: quadrature {lhs:.12e}, closed form {:.12e}",
            rhs.re
        ),
    ))
}

fn f_harmonic(e: &TransformEngine) -> Outcome {
    let (lambda, rho) = (e.model().lambda(), e.model().rho());
    let x = HARM_X;
    let m = e.model().dim();
    let zero = crate::phasetype::CMatrix::zeros(m, m);
    let lhs = expect(e, |z| Ok(e.f_gamma(lambda * x + z, c(1.0))?.value), &[], zero)? * c(rho);
    let corr = e
        .model()
        .spectral()
        .apply(c(-1.0), |v| Ok((v * lambda * x).exp() / e.exp_phi(v * lambda)?))?;
    let rhs = e.f_gamma(x, c(1.0))?.value - corr;
    let res = (&lhs - &rhs).iter().fold(0.0f64, |a, z| a.max(z.norm()));
    Ok((
        res,
        format!("max entry of rho E f(lambda x + Z) - f(x) + e^(...) at x = {x}"),
    ))
}

fn h_balance(e: &TransformEngine) -> Outcome {
    let (lambda, rho) = (e.model().lambda(), e.model().rho());
    let (delta, gamma) = (c(harm_delta(e)), c(0.5));
    let y0 = lambda * HARM_X;
    let expected = expect(e, |z| e.h_func(y0 + z, delta, gamma, HARM_B), &[HARM_B - y0], c(0.0))?;
    let lhs = expected * rho - e.h_func(HARM_X, delta, gamma, HARM_B)?;
    let row = e.alpha_delta(delta, HARM_B)?;
    let sd = e.model().spectral();
    let q = exit(e);
    let a = (row.transpose() * sd.apply(c(-lambda * HARM_X), |v| Ok(v.exp()))? * &q)[(0, 0)];
    let g = (row.transpose() * sd.apply(-gamma * lambda * HARM_X, |v| Ok(v.exp()))? * &q)[(0, 0)];
    let res = (lhs - (a - g)).norm();
    Ok((
        res,
        format!("gamma = {gamma}, delta = {delta}, x = {HARM_X}, b = {HARM_B}"),
    ))
}

/// `(μ, ρ, λ)` sets of the one-phase equivalence grid.
pub const M1_PARAMS: [(f64, f64, f64); 3] = [(1.0, 0.5, 0.5), (2.0, 0.3, 0.7), (1.0, 0.9, 0.2)];
pub const M1_X: [f64; 5] = [-1.0, -0.5, 0.0, 0.25, 0.5];
pub const M1_B: [f64; 5] = [0.6, 0.8, 1.0, 1.5, 2.0];

/// Largest pairwise gap between the residue solver, the general one-phase
/// closed form and the exponential closed form over the grid.
pub fn m1_equivalence_residual() -> Result<f64> {
    let mut worst = 0.0f64;
    for (mu, rho, lambda) in M1_PARAMS {
        let e = TransformEngine::new(exponential_model(mu, lambda, rho)?)?;
        for b in M1_B {
            for x in M1_X {
                let solver = laplace_tau(&PassageProblem::new(&e, b, x)?)?;
                let general = closed_form_exp_general(x, b, &e)?;
                let exp = closed_form_exp(x, b, mu, rho, lambda)?;
                worst = worst
                    .max((solver - general).abs())
                    .max((solver - exp).abs())
                    .max((general - exp).abs());
            }
        }
    }
    Ok(worst)
}

fn m1_equivalence() -> Outcome {
    Ok((
        m1_equivalence_residual()?,
        "max pairwise gap over 3 parameter sets x 25 (x, b)".into(),
    ))
}

fn derivative() -> Outcome {
    let r1 = derivative_identity_check(0.0, 1.0, 1.0, 0.5, 0.5)?;
    let r2 = derivative_identity_check(-0.5, 0.5, 1.0, 0.5, 0.5)?;
    Ok((r1.max(r2), format!("(x, b) = (0, 1): {r1:.3e}; (-0.5, 0.5): {r2:.3e}")))
}

/// Largest relative gap between the partial-fraction forms of `e^{-δb} η_{δ,i}`
/// and `e^{-δb} h_δ(x)` and their direct series at five seeded `δ`.
pub fn residue_reconstruction_residual(e: &TransformEngine, b: f64, x: f64, seed: u64) -> Result<f64> {
    let sys = ResidueSystem::build(e, b)?;
    let reach = 0.75 * e.model().spectral().min_decay();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let delta = C64::new(rng.random_range(-reach..reach), rng.random_range(-1.0..1.0));
        let scale = (-delta * b).exp();
        for i in 0..e.model().dim() {
            let direct = e.eta(delta, i, c(1.0), b)? * scale;
            let rec = sys.reconstruct_eta(delta, i);
            worst = worst.max((direct - rec).norm() / direct.norm().max(1.0));
        }
        let direct = e.h_func(x, delta, c(1.0), b)? * scale;
        let rec = sys.reconstruct_h(delta, x)?;
        worst = worst.max((direct - rec).norm() / direct.norm().max(1.0));
    }
    Ok(worst)
}

fn residues(e: &TransformEngine) -> Outcome {
    let res = residue_reconstruction_residual(e, HARM_B, HARM_X, 17)?;
    Ok((res, format!("eta and h at 5 random delta, b = {HARM_B}, x = {HARM_X}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes() {
        let results = run_suite(&SuiteOptions::default()).unwrap();
        assert_eq!(results.len(), CHECKS.len());
        for r in &results {
            assert!(
                r.passed(),
                "{}: {:.3e} > {:.1e} ({})",
                r.name,
                r.residual,
                r.tol,
                r.detail
            );
        }
    }

    #[test]
    fn tampered_tolerance_fails() {
        let opts = SuiteOptions {
            tol_override: Some(1e-30),
            only: Some("tail_identity".into()),
            ..Default::default()
        };
        let results = run_suite(&opts).unwrap();
        assert_eq!(results.len(), 1);
        assert!(!results[0].passed());
    }

    #[test]
    fn only_filters_and_rejects_unknown() {
        let opts = SuiteOptions {
            only: Some("qbinomial".into()),
            ..Default::default()
        };
        let results = run_suite(&opts).unwrap();
        assert_eq!(results.len(), 1);
        assert_eq!(results[0].name, "qbinomial");
        let bad = SuiteOptions {
            only: Some("nope".into()),
            ..Default::default()
        };
        assert!(run_suite(&bad).is_err());
    }

    #[test]
    fn generic_checks_on_other_models() {
        for model in [
            hyperexponential_model().unwrap(),
            exponential_model(1.0, 0.5, 0.5).unwrap(),
        ] {
            let results = run_suite(&SuiteOptions {
                model: Some(model),
                ..Default::default()
            })
            .unwrap();
            for r in &results {
                assert!(r.passed(), "{}: {:.3e} ({})", r.name, r.residual, r.detail);
            }
        }
    }
}
