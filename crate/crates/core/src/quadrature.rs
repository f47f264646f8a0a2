//! Numerical integration: adaptive Gauss–Kronrod (7/15) on finite and
//! semi-infinite intervals, plus fixed Gauss–Legendre and Gauss–Laguerre rules.

use crate::error::{Error, Result};
use crate::phasetype::CMatrix;
use crate::C64;

/// Values that can be integrated: scalars, complex numbers, complex matrices.
pub trait QuadValue: Clone {
    fn scaled(&self, w: f64) -> Self;
    fn add_scaled(&mut self, w: f64, other: &Self);
    fn magnitude(&self) -> f64;
    fn distance(&self, other: &Self) -> f64;
}

impl QuadValue for f64 {
    fn scaled(&self, w: f64) -> Self {
        self * w
    }
    fn add_scaled(&mut self, w: f64, other: &Self) {
        *self += w * other;
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
    fn distance(&self, other: &Self) -> f64 {
        (self - other).abs()
    }
}

impl QuadValue for C64 {
    fn scaled(&self, w: f64) -> Self {
        self * w
    }
    fn add_scaled(&mut self, w: f64, other: &Self) {
        *self += other * w;
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
    fn distance(&self, other: &Self) -> f64 {
        (self - other).norm()
    }
}

impl QuadValue for CMatrix {
    fn scaled(&self, w: f64) -> Self {
        self * C64::new(w, 0.0)
    }
    fn add_scaled(&mut self, w: f64, other: &Self) {
        *self += other * C64::new(w, 0.0);
    }
    fn magnitude(&self) -> f64 {
        self.iter().fold(0.0, |a, z| a.max(z.norm()))
    }
    fn distance(&self, other: &Self) -> f64 {
        self.iter()
            .zip(other.iter())
            .fold(0.0, |a, (x, y)| a.max((x - y).norm()))
    }
}

/// `w · f()` that skips `f` where the weight has underflowed to zero, so
/// that tails like `e^{-μx} f(x)` with fast-growing `f` stay finite.
pub(crate) struct Weighted<V> {
    zero: Option<V>,
}

impl<V: QuadValue> Weighted<V> {
    pub(crate) fn new() -> Self {
        Self { zero: None }
    }

    pub(crate) fn eval<F: FnOnce() -> V>(&mut self, w: f64, f: F) -> V {
        match self.try_eval(w, || Ok::<V, ()>(f())) {
            Ok(v) => v,
            Err(()) => unreachable!(),
        }
    }

    pub(crate) fn try_eval<E, F: FnOnce() -> std::result::Result<V, E>>(
        &mut self,
        w: f64,
        f: F,
    ) -> std::result::Result<V, E> {
        if w == 0.0 {
            if let Some(z) = &self.zero {
                return Ok(z.clone());
            }
        }
        let v = f()?.scaled(w);
        if self.zero.is_none() {
            self.zero = Some(v.scaled(0.0));
        }
        Ok(v)
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_INTERVALS: usize = 4000;

struct Segment<V> {
    a: f64,
    b: f64,
    value: V,
    error: f64,
}

fn gk15<V: QuadValue, F: FnMut(f64) -> V>(f: &mut F, a: f64, b: f64) -> (V, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc.scaled(WGK[7]);
    let mut gauss = fc.scaled(WG[3]);
    for (k, (&x, &w)) in XGK.iter().zip(&WGK).take(7).enumerate() {
        let f1 = f(c - h * x);
        let f2 = f(c + h * x);
        kron.add_scaled(w, &f1);
        kron.add_scaled(w, &f2);
        if k % 2 == 1 {
            gauss.add_scaled(WG[k / 2], &f1);
            gauss.add_scaled(WG[k / 2], &f2);
        }
    }
    let err = kron.distance(&gauss) * h.abs();
    (kron.scaled(h), err)
}

/// Adaptive Gauss–Kronrod integration of `f` over `[a, b]`.
///
/// Stops once the summed error estimate is below `tol · max(1, |I|)`.
pub fn integrate_generic<V, F>(mut f: F, a: f64, b: f64, tol: f64) -> Result<V>
where
    V: QuadValue,
    F: FnMut(f64) -> V,
{
    let (v, e) = gk15(&mut f, a, b);
    let mut segments = vec![Segment {
        a,
        b,
        value: v,
        error: e,
    }];
    loop {
        let mut total = segments[0].value.scaled(0.0);
        let mut err = 0.0;
        let mut worst = 0;
        for (i, s) in segments.iter().enumerate() {
            total.add_scaled(1.0, &s.value);
            err += s.error;
            if s.error > segments[worst].error {
                worst = i;
            }
        }
        if err <= tol * total.magnitude().max(1.0) {
            return Ok(total);
        }
        if segments.len() >= MAX_INTERVALS {
            return Err(Error::Quadrature(format!(
                "error estimate {err:.3e} after {MAX_INTERVALS} subintervals on [{a}, {b}]"
            )));
        }
        let s = segments.swap_remove(worst);
        let mid = 0.5 * (s.a + s.b);
        if mid <= s.a || mid >= s.b {
            // interval exhausted at machine precision; accept what we have
            segments.push(Segment { error: 0.0, ..s });
            continue;
        }
        let (v1, e1) = gk15(&mut f, s.a, mid);
        let (v2, e2) = gk15(&mut f, mid, s.b);
        segments.push(Segment {
            a: s.a,
            b: mid,
            value: v1,
            error: e1,
        });
        segments.push(Segment {
            a: mid,
            b: s.b,
            value: v2,
            error: e2,
        });
    }
}

/// Real-valued [`integrate_generic`].
pub fn integrate<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    integrate_generic(f, a, b, tol)
}

/// `∫_a^∞ f`, via the map `x = a + t/(1-t)`.
pub fn integrate_to_infinity_generic<V, F>(mut f: F, a: f64, tol: f64) -> Result<V>
where
    V: QuadValue,
    F: FnMut(f64) -> V,
{
    integrate_generic(
        |t: f64| {
            let one_minus = 1.0 - t;
            let x = a + t / one_minus;
            f(x).scaled(1.0 / (one_minus * one_minus))
        },
        0.0,
        1.0,
        tol,
    )
}

pub fn integrate_to_infinity<F: FnMut(f64) -> f64>(f: F, a: f64, tol: f64) -> Result<f64> {
    integrate_to_infinity_generic(f, a, tol)
}

/// `∫_a^∞ f` split at `breaks` (those above `a`), finite pieces by
/// [`integrate_generic`] and the tail by [`integrate_to_infinity_generic`].
pub fn integrate_piecewise_to_infinity<V, F>(mut f: F, a: f64, breaks: &[f64], tol: f64) -> Result<V>
where
    V: QuadValue,
    F: FnMut(f64) -> V,
{
    let mut pts: Vec<f64> = breaks.iter().copied().filter(|&p| p > a && p.is_finite()).collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut lo = a;
    let mut total: Option<V> = None;
    for p in pts {
        let piece = integrate_generic(&mut f, lo, p, tol)?;
        match total.as_mut() {
            Some(t) => t.add_scaled(1.0, &piece),
            None => total = Some(piece),
        }
        lo = p;
    }
    let tail = integrate_to_infinity_generic(&mut f, lo, tol)?;
    Ok(match total {
        Some(mut t) => {
            t.add_scaled(1.0, &tail);
            t
        }
        None => tail,
    })
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Gauss–Laguerre nodes and weights for `∫_0^∞ e^{-u} f(u) du`.
pub fn gauss_laguerre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..n {
        z = match i {
            0 => 3.0 / (1.0 + 2.4 * nf),
            1 => z + 15.0 / (1.0 + 2.5 * nf),
            _ => {
                let ai = (i - 1) as f64;
                z + ((1.0 + 2.55 * ai) / (1.9 * ai)) * (z - x[i - 2])
            }
        };
        let mut pp = 0.0;
        let mut p2 = 0.0;
        for _ in 0..200 {
            let mut p1 = 1.0;
            p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 - z) * p2 / (j + 1) as f64 - j as f64 * p3 / (j + 1) as f64;
            }
            pp = nf * (p1 - p2) / z;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 3e-15 * z.abs() {
                break;
            }
        }
        x[i] = z;
        w[i] = -1.0 / (pp * nf * p2);
    }
    (x, w)
}

/// `∫_a^b f` by an `n`-point Gauss–Legendre rule.
pub fn legendre_rule<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    rule.0.iter().zip(&rule.1).map(|(x, w)| w * f(c + h * x)).sum::<f64>() * h
}
