//! q-Pochhammer symbols and the Euler function.
//!
//! Convention: `(a; q)_n = ∏_{k=0}^{n-1} (1 - a q^k)`, so `(a; q)_0 = 1` and
//! `(λ; λ)_{n-1} = ∏_{k=1}^{n-1} (1 - λ^k)`.

use crate::error::{Error, Result};

const MAX_FACTORS: usize = 1_000_000;

/// Finite product `(a; q)_n`.
pub fn q_pochhammer(a: f64, q: f64, n: usize) -> f64 {
    let mut p = 1.0;
    let mut aq = a;
    for _ in 0..n {
        p *= 1.0 - aq;
        aq *= q;
    }
    p
}

/// `(a; q)_∞` with its truncation bound.
///
/// Factors are multiplied until `|a q^k| < tol (1 - |q|)`; the neglected tail
/// changes the logarithm of the product by at most about
/// `|a q^k| / (1 - |q|)`, which is returned relative to the value.
pub fn q_pochhammer_inf_bounded(a: f64, q: f64, tol: f64) -> Result<(f64, f64)> {
    if !(q.abs() < 1.0) {
        return Err(Error::InvalidParameter(format!("|q| = {} must be < 1", q.abs())));
    }
    if q != 0.0 && !(a.abs() < 1.0 / q.abs()) {
        return Err(Error::InvalidParameter(format!(
            "|a| = {} must be below 1/|q| = {}",
            a.abs(),
            1.0 / q.abs()
        )));
    }
    let gap = 1.0 - q.abs();
    let mut p = 1.0f64;
    let mut aq = a;
    for _ in 0..MAX_FACTORS {
        if aq.abs() < tol * gap {
            let bound = 2.0 * aq.abs() / gap * p.abs();
            return Ok((p, bound));
        }
        p *= 1.0 - aq;
        aq *= q;
    }
    Err(Error::NonConvergence {
        what: "infinite q-Pochhammer product",
        terms: MAX_FACTORS,
    })
}

/// `(a; q)_∞`.
pub fn q_pochhammer_inf(a: f64, q: f64, tol: f64) -> Result<f64> {
    q_pochhammer_inf_bounded(a, q, tol).map(|(v, _)| v)
}

/// Euler function `φ_e(q) = (q; q)_∞`.
pub fn euler_function(q: f64) -> Result<f64> {
    q_pochhammer_inf(q, q, 1e-17)
}

/// `Σ_{n≥0} z^n / (q; q)_n`, which the q-binomial theorem identifies with
/// `1 / (z; q)_∞` for `|z| < 1`.
pub fn q_binomial_series(z: f64, q: f64, tol: f64) -> Result<f64> {
    if !(z.abs() < 1.0 && q.abs() < 1.0) {
        return Err(Error::InvalidParameter(
            "q-binomial series needs |z| < 1 and |q| < 1".into(),
        ));
    }
    let mut sum = 1.0;
    let mut term = 1.0;
    for n in 0..MAX_FACTORS {
        // term_{n+1} = term_n · z / (1 - q^{n+1})
        term *= z / (1.0 - q.powi(n as i32 + 1));
        sum += term;
        if term.abs() < tol * sum.abs() * (1.0 - z.abs()) {
            return Ok(sum);
        }
    }
    Err(Error::NonConvergence {
        what: "q-binomial series",
        terms: MAX_FACTORS,
    })
}

/// `|Σ_n z^n/(q;q)_n · (z;q)_∞ - 1|`.
pub fn q_binomial_residual(z: f64, q: f64) -> Result<f64> {
    let lhs = q_binomial_series(z, q, 1e-17)?;
    let rhs = q_pochhammer_inf(z, q, 1e-17)?;
    Ok((lhs * rhs - 1.0).abs())
}
