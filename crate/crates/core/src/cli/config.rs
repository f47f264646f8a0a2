//! JSON run configuration.

use crate::error::{Error, Result};
use crate::innovations::{Innovation, NegativePart};
use crate::phasetype::PhaseTypeDist;
use crate::stopping::GainFunction;
use crate::transforms::{Ar1Model, TransformEngine};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<GainSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<StopConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<Tolerances>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub lambda: f64,
    pub rho: f64,
    /// Sub-generator, row-major, `m²` entries.
    pub q: Vec<f64>,
    pub alpha: Vec<f64>,
    #[serde(default = "zero_t")]
    pub t: NegativePart,
}

fn zero_t() -> NegativePart {
    NegativePart::Zero
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub b: f64,
    pub x: XSpec,
}

/// A single start point, an explicit list, or `count` equispaced points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum XSpec {
    Point(f64),
    List(Vec<f64>),
    Range(GridRange),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridRange {
    pub from: f64,
    pub to: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GainSpec {
    Identity,
    Power { n: u32 },
    Call { strike: f64 },
}

impl GainSpec {
    pub fn to_gain(self) -> GainFunction {
        match self {
            GainSpec::Identity => GainFunction::Identity,
            GainSpec::Power { n } => GainFunction::Power(n),
            GainSpec::Call { strike } => GainFunction::Call(strike),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McBlock {
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopConfig {
    /// Evaluate this threshold instead of the optimal one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// Search window for the continuous-fit root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<CurveSpec>,
}

/// Curve grid `b + k·step` covering `[b - below, b + above]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveSpec {
    pub below: f64,
    pub above: f64,
    pub step: f64,
}

impl Default for CurveSpec {
    fn default() -> Self {
        Self {
            below: 3.0,
            above: 2.0,
            step: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Truncation tolerance of the transform series.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_terms: Option<usize>,
    /// Allowed negative margin in the verification conditions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<f64>,
    /// Replaces every tolerance of the validation suite.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validate: Option<f64>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidParameter(format!("config: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn tolerances(&self) -> Tolerances {
        self.tolerances.unwrap_or_default()
    }

    pub fn ar1_model(&self) -> Result<Ar1Model> {
        self.model.build()
    }

    pub fn engine(&self) -> Result<TransformEngine> {
        let tol = self.tolerances();
        TransformEngine::with_tolerance(
            self.ar1_model()?,
            tol.series.unwrap_or(TransformEngine::DEFAULT_TOL),
            tol.max_terms.unwrap_or(TransformEngine::DEFAULT_MAX_TERMS),
        )
    }

    pub fn problem(&self) -> Result<&ProblemConfig> {
        self.problem
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("config has no problem block".into()))
    }

    pub fn gain(&self) -> GainFunction {
        self.gain.unwrap_or(GainSpec::Identity).to_gain()
    }
}

impl ModelConfig {
    pub fn build(&self) -> Result<Ar1Model> {
        let m = self.alpha.len();
        if m == 0 || self.q.len() != m * m {
            return Err(Error::InvalidGenerator(format!(
                "q has {} entries but alpha has {m}; expected {} (row-major m x m)",
                self.q.len(),
                m * m
            )));
        }
        let s = PhaseTypeDist::validate(
            DMatrix::from_row_slice(m, m, &self.q),
            DVector::from_column_slice(&self.alpha),
        )?;
        Ar1Model::new(self.lambda, self.rho, Innovation::new(s, self.t)?)
    }
}

impl ProblemConfig {
    /// Start points, checked finite, strictly ascending and below `b`.
    pub fn xs(&self) -> Result<Vec<f64>> {
        let xs = match &self.x {
            XSpec::Point(x) => vec![*x],
            XSpec::List(v) => v.clone(),
            XSpec::Range(r) => {
                if r.count < 2 {
                    return Err(Error::InvalidParameter("x range needs count ≥ 2".into()));
                }
                let h = (r.to - r.from) / (r.count - 1) as f64;
                (0..r.count).map(|k| r.from + h * k as f64).collect()
            }
        };
        if xs.is_empty() {
            return Err(Error::InvalidParameter("x grid is empty".into()));
        }
        if !self.b.is_finite() || xs.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("b and every x must be finite".into()));
        }
        if xs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("x grid must be strictly ascending".into()));
        }
        if let Some(x) = xs.iter().find(|&&x| x >= self.b) {
            return Err(Error::Precondition(format!("x = {x} is not below b = {}", self.b)));
        }
        Ok(xs)
    }
}

impl CurveSpec {
    pub fn grid(&self, b: f64) -> Result<Vec<f64>> {
        if !(self.step > 0.0 && self.below >= 0.0 && self.above >= 0.0) {
            return Err(Error::InvalidParameter(
                "curve needs step > 0 and nonnegative extents".into(),
            ));
        }
        let lo = (self.below / self.step).round() as i64;
        let hi = (self.above / self.step).round() as i64;
        Ok((-lo..=hi).map(|k| b + self.step * k as f64).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
        "model": {"lambda": 0.5, "rho": 0.6, "q": [-2, 1, 0, -3], "alpha": [0.5, 0.5],
                  "t": {"kind": "exponential", "rate": 2}},
        "problem": {"b": 1, "x": {"from": -1, "to": 0.5, "count": 4}},
        "gain": {"kind": "call", "strike": 0.5},
        "mc": {"n_paths": 1000, "seed": 7},
        "stop": {"window": [0, 3]},
        "output": {"format": "json"},
        "tolerances": {"series": 1e-13}
    }"#;

    #[test]
    fn parse_emit_parse_is_idempotent() {
        let cfg = RunConfig::from_json(SAMPLE).unwrap();
        let again = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(again.to_json(), cfg.to_json());
        assert_eq!(cfg.ar1_model().unwrap().dim(), 2);
        assert_eq!(cfg.problem().unwrap().xs().unwrap(), vec![-1.0, -0.5, 0.0, 0.5]);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_grids() {
        let bad = SAMPLE.replace("\"seed\": 7", "\"seed\": 7, \"sede\": 1");
        assert!(RunConfig::from_json(&bad).is_err());
        let p = ProblemConfig {
            b: 1.0,
            x: XSpec::List(vec![0.0, 1.0]),
        };
        assert!(matches!(p.xs(), Err(Error::Precondition(_))));
        let p = ProblemConfig {
            b: 1.0,
            x: XSpec::List(vec![0.5, 0.0]),
        };
        assert!(p.xs().is_err());
        let m = ModelConfig {
            lambda: 0.5,
            rho: 0.5,
            q: vec![-1.0, 0.0],
            alpha: vec![1.0],
            t: NegativePart::Zero,
        };
        assert!(matches!(m.build(), Err(Error::InvalidGenerator(_))));
    }

    #[test]
    fn curve_contains_threshold() {
        let g = CurveSpec::default().grid(0.7).unwrap();
        assert_eq!(g.len(), 501);
        assert!(g.contains(&0.7));
    }
}
