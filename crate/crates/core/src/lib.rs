//! Threshold times and overshoot of AR(1) processes
//! `X_n = λ X_{n-1} + Z_n` whose innovations split as `Z = S - T`, with `S`
//! phase-type distributed and `T ≥ 0` drawn from a family with a closed-form
//! Laplace transform.
//!
//! The crate computes the discounted crossing transform
//! `Φ_i(x) = E_x(ρ^τ 1{crossing in phase i})` through a residue linear system,
//! the joint threshold-time/overshoot functional `E_x(ρ^τ g(X_τ))`, and
//! optimal thresholds for discounted stopping problems via continuous fit.
//! Every analytic quantity can be checked against the simulation oracle in
//! [`montecarlo`].
//!
//! Phase indices are zero-based in the API and one-based in CLI output.

// `!(a < b)` comparisons are meant to reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod exec;
pub mod innovations;
pub mod montecarlo;
pub mod passage;
pub mod phasetype;
pub mod qseries;
pub mod quadrature;
pub mod roots;
pub mod stopping;
pub mod suite;
pub mod transforms;

pub use error::{Error, Result};
pub use innovations::{Innovation, NegativePart};
pub use passage::{CrossingTransform, PassageProblem, ResidueSystem};
pub use phasetype::{ChainSample, PhaseTypeDist, SpectralData};
pub use stopping::{GainFunction, StoppingSolution};
pub use transforms::{Ar1Model, TransformEngine};

/// Complex scalar used throughout the spectral path.
pub type C64 = num_complex::Complex64;
