//! Phase-type distributions `PH(Q, α)`: the absorption time of a finite
//! continuous-time Markov chain with sub-generator `Q` started from `α`.
//!
//! Density, distribution function and Laplace transform are evaluated
//! through the cached [`SpectralData`] of `Q`. Values for `s < 0` are 0 by
//! convention since the law lives on `(0, ∞)`.

mod spectral;

pub use spectral::{matrix_function, CMatrix, CVector, SpectralData};

use crate::error::{Error, Result};
use crate::C64;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Exp1;
use std::sync::Arc;

/// Default relative guard around the poles of the Laplace transform.
pub const POLE_GUARD: f64 = 1e-12;

/// Largest imaginary part (relative) tolerated on a probabilistic quantity.
pub(crate) const REAL_TOL: f64 = 1e-9;

/// One trajectory of the underlying absorbing chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSample {
    /// `(phase, holding time)` pairs in visiting order.
    pub holding_times: Vec<(usize, f64)>,
    /// Time to absorption; the sum of the holding times.
    pub lifetime: f64,
}

impl ChainSample {
    /// Phase occupied at elapsed time `t`, or `None` once absorbed.
    pub fn phase_at(&self, t: f64) -> Option<usize> {
        phase_at(&self.holding_times, t)
    }
}

pub(crate) fn phase_at(holding: &[(usize, f64)], t: f64) -> Option<usize> {
    let mut elapsed = 0.0;
    for &(phase, d) in holding {
        elapsed += d;
        if t < elapsed {
            return Some(phase);
        }
    }
    None
}

/// Jump table for simulating the chain.
#[derive(Debug, Clone)]
struct ChainTable {
    initial_cdf: Vec<f64>,
    rates: Vec<f64>,
    /// Cumulative jump probabilities; `None` marks absorption.
    jumps: Vec<Vec<(f64, Option<usize>)>>,
}

impl ChainTable {
    fn new(q: &DMatrix<f64>, alpha: &DVector<f64>, exit: &DVector<f64>) -> Self {
        let m = q.nrows();
        let mut acc = 0.0;
        let initial_cdf = alpha
            .iter()
            .map(|a| {
                acc += a;
                acc
            })
            .collect();
        let rates: Vec<f64> = (0..m).map(|i| -q[(i, i)]).collect();
        let jumps = (0..m)
            .map(|i| {
                let mut acc = 0.0;
                let mut row = Vec::new();
                for j in 0..m {
                    if j != i && q[(i, j)] > 0.0 {
                        acc += q[(i, j)] / rates[i];
                        row.push((acc, Some(j)));
                    }
                }
                if exit[i] > 0.0 {
                    row.push((1.0, None));
                } else if let Some(last) = row.last_mut() {
                    last.0 = 1.0;
                }
                row
            })
            .collect();
        Self {
            initial_cdf,
            rates,
            jumps,
        }
    }

    fn pick_initial(&self, u: f64) -> usize {
        let m = self.initial_cdf.len();
        self.initial_cdf.iter().position(|&c| u < c).unwrap_or_else(|| {
            // rounding in the last cumulative entry: fall back to the last
            // phase carrying mass
            (0..m)
                .rev()
                .find(|&i| i == 0 || self.initial_cdf[i] > self.initial_cdf[i - 1])
                .unwrap_or(m - 1)
        })
    }

    fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<(usize, f64)>) -> f64 {
        out.clear();
        let mut phase = self.pick_initial(rng.random::<f64>());
        let mut total = 0.0;
        loop {
            let e: f64 = rng.sample(Exp1);
            let d = e / self.rates[phase];
            out.push((phase, d));
            total += d;
            let u: f64 = rng.random();
            let row = &self.jumps[phase];
            let next = row
                .iter()
                .find(|(c, _)| u < *c)
                .map_or(row.last().and_then(|r| r.1), |r| r.1);
            match next {
                Some(j) => phase = j,
                None => return total,
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct PhaseTypeDist {
    generator: DMatrix<f64>,
    alpha: DVector<f64>,
    exit: DVector<f64>,
    spectral: Arc<SpectralData>,
    /// `α P_j q`
    density_weights: Vec<C64>,
    /// `α P_j 1`
    survival_weights: Vec<C64>,
    table: ChainTable,
}

impl PhaseTypeDist {
    /// Validate `(Q, α)` and build the distribution.
    pub fn validate(q: DMatrix<f64>, alpha: DVector<f64>) -> Result<Self> {
        let m = q.nrows();
        if m == 0 || q.ncols() != m {
            return Err(Error::InvalidGenerator(format!(
                "Q must be square and nonempty, got {}x{}",
                q.nrows(),
                q.ncols()
            )));
        }
        if alpha.len() != m {
            return Err(Error::InvalidInitial(format!(
                "alpha has length {} but Q is {m}x{m}",
                alpha.len()
            )));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGenerator("Q has non-finite entries".into()));
        }
        let scale = q.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let tol = 1e-12 * scale.max(1.0);
        let mut any_exit = false;
        for i in 0..m {
            for j in 0..m {
                if i != j && q[(i, j)] < 0.0 {
                    return Err(Error::InvalidGenerator(format!(
                        "off-diagonal entry Q[{i}][{j}] = {} is negative",
                        q[(i, j)]
                    )));
                }
            }
            let row_sum: f64 = q.row(i).sum();
            if row_sum > tol {
                return Err(Error::InvalidGenerator(format!("row {i} sums to {row_sum} > 0")));
            }
            if row_sum < -tol {
                any_exit = true;
            }
        }
        if !any_exit {
            return Err(Error::InvalidGenerator(
                "no row has a negative sum, so the chain is never absorbed".into(),
            ));
        }
        if alpha.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::InvalidInitial("entries must be finite and nonnegative".into()));
        }
        let total: f64 = alpha.sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInitial(format!("entries sum to {total}, expected 1")));
        }

        let spectral = Arc::new(SpectralData::decompose(&q)?);
        let mut exit = -(&q * DVector::from_element(m, 1.0));
        // row sums within rounding of zero are exactly zero exit rate
        exit.iter_mut().for_each(|v| {
            if v.abs() <= tol {
                *v = 0.0
            }
        });
        Ok(Self::assemble(q, alpha, exit, spectral))
    }

    fn assemble(q: DMatrix<f64>, alpha: DVector<f64>, exit: DVector<f64>, spectral: Arc<SpectralData>) -> Self {
        let alpha_c = alpha.map(|v| C64::new(v, 0.0));
        let density_weights = spectral.exit_parts().iter().map(|pq| alpha_c.dot(pq)).collect();
        let survival_weights = spectral.unit_parts().iter().map(|p1| alpha_c.dot(p1)).collect();
        let table = ChainTable::new(&q, &alpha, &exit);
        Self {
            generator: q,
            alpha,
            exit,
            spectral,
            density_weights,
            survival_weights,
            table,
        }
    }

    /// Convenience constructor from row slices.
    pub fn from_rows(rows: &[&[f64]], alpha: &[f64]) -> Result<Self> {
        let m = rows.len();
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidGenerator("rows of Q have unequal length".into()));
        }
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::validate(DMatrix::from_row_slice(m, m, &flat), DVector::from_column_slice(alpha))
    }

    /// Exponential law with the given rate.
    pub fn exponential(rate: f64) -> Result<Self> {
        Self::from_rows(&[&[-rate]], &[1.0])
    }

    /// Mixture of exponentials with the given rates and weights.
    pub fn hyperexponential(rates: &[f64], weights: &[f64]) -> Result<Self> {
        let m = rates.len();
        let q = DMatrix::from_fn(m, m, |i, j| if i == j { -rates[i] } else { 0.0 });
        Self::validate(q, DVector::from_column_slice(weights))
    }

    /// The same chain started from another initial vector.
    pub fn with_initial(&self, alpha: DVector<f64>) -> Result<Self> {
        let m = self.dim();
        if alpha.len() != m {
            return Err(Error::InvalidInitial(format!("expected length {m}")));
        }
        if alpha.iter().any(|a| !a.is_finite() || *a < 0.0) || (alpha.sum() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInitial("must be a probability vector".into()));
        }
        Ok(Self::assemble(
            self.generator.clone(),
            alpha,
            self.exit.clone(),
            Arc::clone(&self.spectral),
        ))
    }

    /// `PH(Q, e_i)`: the chain started in phase `i`.
    pub fn started_in(&self, phase: usize) -> Result<Self> {
        let m = self.dim();
        if phase >= m {
            return Err(Error::InvalidParameter(format!("phase {phase} out of range 0..{m}")));
        }
        self.with_initial(DVector::from_fn(m, |i, _| if i == phase { 1.0 } else { 0.0 }))
    }

    pub fn dim(&self) -> usize {
        self.generator.nrows()
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// `q = -Q 1`.
    pub fn exit_vector(&self) -> &DVector<f64> {
        &self.exit
    }

    pub fn spectral(&self) -> &SpectralData {
        &self.spectral
    }

    /// `α P_j q` for each eigenvalue.
    pub fn density_weights(&self) -> &[C64] {
        &self.density_weights
    }

    /// `P(η > s) = α e^{Qs} 1`.
    pub fn survival(&self, s: f64) -> f64 {
        if s < 0.0 {
            return 1.0;
        }
        let v: C64 = self
            .spectral
            .mu()
            .iter()
            .zip(&self.survival_weights)
            .map(|(mu, w)| w * (-mu * s).exp())
            .sum();
        v.re.clamp(0.0, 1.0)
    }

    /// `H(s) = 1 - α e^{Qs} 1`; 0 for `s < 0`.
    pub fn cdf(&self, s: f64) -> f64 {
        if s < 0.0 {
            return 0.0;
        }
        (1.0 - self.survival(s)).clamp(0.0, 1.0)
    }

    /// `h(s) = α e^{Qs} q`; 0 for `s < 0`.
    pub fn pdf(&self, s: f64) -> f64 {
        if s < 0.0 {
            return 0.0;
        }
        let v: C64 = self
            .spectral
            .mu()
            .iter()
            .zip(&self.density_weights)
            .map(|(mu, w)| w * (-mu * s).exp())
            .sum();
        v.re.max(0.0)
    }

    /// `α(-sI - Q)^{-1} q`, which equals `E(e^{sη})` where the expectation is finite
    /// and continues it analytically elsewhere.
    pub fn laplace(&self, s: C64) -> Result<C64> {
        self.laplace_guarded(s, POLE_GUARD)
    }

    /// [`laplace`](Self::laplace) with an explicit relative pole guard.
    pub fn laplace_guarded(&self, s: C64, guard: f64) -> Result<C64> {
        resolvent_sum(self.spectral.mu(), &self.density_weights, s, guard)
    }

    /// `k! α (-Q)^{-k} 1`.
    pub fn moment(&self, k: u32) -> f64 {
        let fact: f64 = (1..=k).map(f64::from).product();
        let v: C64 = self
            .spectral
            .mu()
            .iter()
            .zip(&self.survival_weights)
            .map(|(mu, w)| w / mu.powu(k))
            .sum();
        fact * v.re
    }

    pub fn mean(&self) -> f64 {
        self.moment(1)
    }

    /// Phase distribution at time `t` conditioned on survival:
    /// `π^t = α e^{Qt} / (α e^{Qt} 1)`. The residual lifetime is `PH(Q, π^t)`.
    pub fn restart_vector(&self, t: f64) -> DVector<f64> {
        let m = self.dim();
        if m == 1 {
            return DVector::from_element(1, 1.0);
        }
        let alpha_c = self.alpha.map(|v| C64::new(v, 0.0));
        let mut row = DVector::from_element(m, C64::new(0.0, 0.0));
        for (p, mu) in self.spectral.projectors().iter().zip(self.spectral.mu()) {
            row += p.tr_mul(&alpha_c) * (-mu * t).exp();
        }
        let mut out = row.map(|z| z.re.max(0.0));
        let total = out.sum();
        out /= total;
        out
    }

    /// Draw one trajectory of the absorbing chain.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ChainSample {
        let mut holding_times = Vec::new();
        let lifetime = self.table.sample_into(rng, &mut holding_times);
        ChainSample {
            holding_times,
            lifetime,
        }
    }

    /// Allocation-free variant of [`sample`](Self::sample); returns the lifetime.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, holding: &mut Vec<(usize, f64)>) -> f64 {
        self.table.sample_into(rng, holding)
    }
}

/// `Σ_j w_j / (μ_j - s)` with a relative pole guard.
pub(crate) fn resolvent_sum(mu: &[C64], weights: &[C64], s: C64, guard: f64) -> Result<C64> {
    let mut acc = C64::new(0.0, 0.0);
    for (m, w) in mu.iter().zip(weights) {
        let gap = m - s;
        if gap.norm() <= guard * m.norm().max(1.0) {
            return Err(Error::Pole {
                at: s,
                eigenvalue: *m,
                context: String::new(),
            });
        }
        acc += w / gap;
    }
    Ok(acc)
}

/// Real part of `z`, or an error if the imaginary part is not negligible
/// relative to `scale`.
pub(crate) fn assert_real(z: C64, scale: f64, what: &str) -> Result<f64> {
    if z.im.abs() > REAL_TOL * scale.max(z.norm()).max(1e-300) {
        return Err(Error::NumericalConsistency(format!(
            "{what} should be real but has imaginary part {:.3e} (value {z})",
            z.im
        )));
    }
    Ok(z.re)
}
