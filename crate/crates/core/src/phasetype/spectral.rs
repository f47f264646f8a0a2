//! Spectral projectors of a sub-generator with simple eigenvalues.
//!
//! Every matrix that appears in the crossing calculus is a function of `Q`,
//! so once `Q = Σ_j (-μ_j) P_j` is known, `f(cQ) = Σ_j f(-c μ_j) P_j` for any
//! scalar `f` analytic at the eigenvalues.

use crate::error::{Error, Result};
use crate::C64;
use nalgebra::{DMatrix, DVector};

pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Relative gap below which two eigenvalues count as repeated.
const REPEAT_GAP: f64 = 1e-8;
/// Largest reconstruction residual accepted at construction.
const RECONSTRUCTION_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct SpectralData {
    /// Eigenvalues of `-Q` (positive real parts).
    mu: Vec<C64>,
    projectors: Vec<CMatrix>,
    /// `P_j q`, with `q = -Q 1` the exit vector.
    exit_parts: Vec<CVector>,
    /// `P_j 1`.
    unit_parts: Vec<CVector>,
    residual: f64,
}

impl SpectralData {
    /// Decompose a sub-generator. Rejects eigenvalues with nonnegative real
    /// part and repeated (or defective) eigenvalues.
    pub fn decompose(q: &DMatrix<f64>) -> Result<Self> {
        let m = q.nrows();
        if m == 0 || q.ncols() != m {
            return Err(Error::InvalidGenerator(format!(
                "expected a nonempty square matrix, got {}x{}",
                q.nrows(),
                q.ncols()
            )));
        }
        let scale = q.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut evs: Vec<C64> = q.complex_eigenvalues().iter().copied().collect();
        for ev in evs.iter_mut() {
            if ev.im.abs() <= 1e-14 * scale {
                ev.im = 0.0;
            }
        }
        for ev in &evs {
            if ev.re >= 0.0 {
                return Err(Error::Spectrum {
                    eigenvalue: *ev,
                    reason: "eigenvalue of Q with nonnegative real part".into(),
                });
            }
        }
        let ev_scale = evs.iter().fold(0.0f64, |a, v| a.max(v.norm()));
        for j in 0..m {
            for k in (j + 1)..m {
                if (evs[j] - evs[k]).norm() <= REPEAT_GAP * ev_scale {
                    return Err(Error::Spectrum {
                        eigenvalue: evs[j],
                        reason: "repeated or defective eigenvalue".into(),
                    });
                }
            }
        }

        let qc: CMatrix = q.map(|v| C64::new(v, 0.0));
        let qt = qc.transpose();
        let mut projectors = Vec::with_capacity(m);
        for &ev in &evs {
            let right = null_vector(&qc, ev, scale)?;
            let left = null_vector(&qt, ev, scale)?;
            let denom = left.dot(&right);
            if denom.norm() <= 1e-12 * left.norm() * right.norm() {
                return Err(Error::Spectrum {
                    eigenvalue: ev,
                    reason: "defective eigenvalue (left and right eigenvectors orthogonal)".into(),
                });
            }
            projectors.push(&right * left.transpose() / denom);
        }

        let mut sum = CMatrix::zeros(m, m);
        let mut recon = CMatrix::zeros(m, m);
        for (p, &ev) in projectors.iter().zip(&evs) {
            sum += p;
            recon += p * ev;
        }
        let identity_err = (sum - CMatrix::identity(m, m))
            .iter()
            .fold(0.0f64, |a, z| a.max(z.norm()));
        let recon_err = (recon - &qc).iter().fold(0.0f64, |a, z| a.max(z.norm())) / scale;
        let residual = identity_err.max(recon_err);
        if !(residual <= RECONSTRUCTION_TOL) {
            let worst = evs[0];
            return Err(Error::Spectrum {
                eigenvalue: worst,
                reason: format!("ill-conditioned eigen-decomposition (residual {residual:.3e})"),
            });
        }

        let exit = -(q * DVector::from_element(m, 1.0));
        let exit_c = exit.map(|v| C64::new(v, 0.0));
        let ones = CVector::from_element(m, C64::new(1.0, 0.0));
        let exit_parts = projectors.iter().map(|p| p * &exit_c).collect();
        let unit_parts = projectors.iter().map(|p| p * &ones).collect();

        Ok(Self {
            mu: evs.iter().map(|ev| -ev).collect(),
            projectors,
            exit_parts,
            unit_parts,
            residual,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Eigenvalues `μ_j` of `-Q`.
    pub fn mu(&self) -> &[C64] {
        &self.mu
    }

    pub fn projectors(&self) -> &[CMatrix] {
        &self.projectors
    }

    /// `P_j q`.
    pub fn exit_parts(&self) -> &[CVector] {
        &self.exit_parts
    }

    /// `P_j 1`.
    pub fn unit_parts(&self) -> &[CVector] {
        &self.unit_parts
    }

    /// Worst of `|Σ P_j - I|` and the relative reconstruction error of `Q`.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// Smallest real part among the `μ_j`; the decay rate of the slowest phase.
    pub fn min_decay(&self) -> f64 {
        self.mu.iter().fold(f64::INFINITY, |a, z| a.min(z.re))
    }

    pub fn max_modulus(&self) -> f64 {
        self.mu.iter().fold(0.0, |a, z| a.max(z.norm()))
    }

    /// `f(cQ) = Σ_j f(-c μ_j) P_j`.
    pub fn apply<F>(&self, c: C64, mut f: F) -> Result<CMatrix>
    where
        F: FnMut(C64) -> Result<C64>,
    {
        let m = self.dim();
        let mut out = CMatrix::zeros(m, m);
        for (p, mu) in self.projectors.iter().zip(&self.mu) {
            out += p * f(-c * mu)?;
        }
        Ok(out)
    }

    /// Same as [`apply`](Self::apply) but with the eigenvalue index passed to `f`
    /// instead of the eigenvalue itself.
    pub fn apply_indexed<F>(&self, mut f: F) -> Result<CMatrix>
    where
        F: FnMut(usize) -> Result<C64>,
    {
        let m = self.dim();
        let mut out = CMatrix::zeros(m, m);
        for (j, p) in self.projectors.iter().enumerate() {
            out += p * f(j)?;
        }
        Ok(out)
    }
}

/// `f(cQ)` for the matrix whose spectral data is `sd`.
pub fn matrix_function<F>(sd: &SpectralData, c: C64, f: F) -> Result<CMatrix>
where
    F: FnMut(C64) -> Result<C64>,
{
    sd.apply(c, f)
}

/// Eigenvector of `a` for eigenvalue `ev` by shifted inverse iteration.
fn null_vector(a: &CMatrix, ev: C64, scale: f64) -> Result<CVector> {
    let m = a.nrows();
    let mut shift = 1e-10 * scale;
    for _ in 0..6 {
        let shifted = a - CMatrix::identity(m, m) * (ev + shift);
        let lu = shifted.lu();
        let mut x = CVector::from_fn(m, |i, _| C64::new(1.0 + 0.1 * i as f64, 0.05 * i as f64));
        let mut ok = true;
        for _ in 0..4 {
            match lu.solve(&x) {
                Some(y) if y.iter().all(|z| z.re.is_finite() && z.im.is_finite()) => {
                    let n = y.iter().fold(0.0f64, |a, z| a.max(z.norm()));
                    if n == 0.0 {
                        ok = false;
                        break;
                    }
                    x = y / C64::new(n, 0.0);
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Ok(x);
        }
        shift *= 100.0;
    }
    Err(Error::Spectrum {
        eigenvalue: ev,
        reason: "inverse iteration failed to isolate an eigenvector".into(),
    })
}
