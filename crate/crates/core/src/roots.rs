//! Scalar root finding and one-dimensional maximization.

use crate::error::{Error, Result};

/// Bracketed root of `f` on `[a, b]`: bisection steps safeguarding secant
/// (inverse quadratic) updates, Brent style.
pub fn find_root<F>(mut f: F, mut a: f64, mut b: f64, xtol: f64, ftol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut fa = f(a)?;
    let mut fb = f(b)?;
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::Bracket(format!(
            "f({a}) = {fa:.3e} and f({b}) = {fb:.3e} have the same sign"
        )));
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb.abs() <= ftol {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q) = if a == c {
                (2.0 * m * s, 1.0 - s)
            } else {
                let q = fa / fc;
                let r = fb / fc;
                (
                    s * (2.0 * m * q * (q - r) - (b - a) * (r - 1.0)),
                    (q - 1.0) * (r - 1.0) * (s - 1.0),
                )
            };
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b)?;
    }
    Err(Error::NonConvergence {
        what: "bracketed root search",
        terms: 200,
    })
}

/// All sign changes of `f` on a uniform scan of `[lo, hi]`, each refined
/// with [`find_root`].
pub fn find_all_roots<F>(mut f: F, lo: f64, hi: f64, scan: usize, xtol: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64) -> Result<f64>,
{
    let step = (hi - lo) / scan as f64;
    let mut roots = Vec::new();
    let mut x0 = lo;
    let mut f0 = f(x0)?;
    for k in 1..=scan {
        let x1 = if k == scan { hi } else { lo + step * k as f64 };
        let f1 = f(x1)?;
        if f0 == 0.0 {
            roots.push(x0);
        } else if f0.signum() != f1.signum() && f1 != 0.0 {
            roots.push(find_root(&mut f, x0, x1, xtol, 0.0)?);
        }
        if k == scan && f1 == 0.0 {
            roots.push(x1);
        }
        x0 = x1;
        f0 = f1;
    }
    Ok(roots)
}

/// Golden-section search for a maximizer of a unimodal `f` on `[a, b]`.
pub fn golden_max<F>(mut f: F, mut a: f64, mut b: f64, xtol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while (b - a).abs() > xtol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_finds_cubic_root() {
        let r = find_root(|x| Ok(x * x * x - 2.0), 0.0, 2.0, 1e-14, 0.0).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-13);
    }

    #[test]
    fn scan_finds_every_root() {
        let roots = find_all_roots(|x| Ok((x - 0.5) * (x - 1.5) * (x - 2.5)), 0.0, 3.0, 64, 1e-13).unwrap();
        assert_eq!(roots.len(), 3);
        for (r, e) in roots.iter().zip([0.5, 1.5, 2.5]) {
            assert!((r - e).abs() < 1e-12);
        }
    }

    #[test]
    fn no_bracket_is_an_error() {
        assert!(matches!(
            find_root(|x| Ok(x * x + 1.0), -1.0, 1.0, 1e-12, 0.0),
            Err(Error::Bracket(_))
        ));
    }

    #[test]
    fn golden_section_maximum() {
        let x = golden_max(|x| Ok(-(x - 0.3).powi(2)), -1.0, 2.0, 1e-9).unwrap();
        assert!((x - 0.3).abs() < 1e-8);
    }
}
