use crate::C64;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid sub-generator: {0}")]
    InvalidGenerator(String),

    #[error("invalid initial vector: {0}")]
    InvalidInitial(String),

    #[error("unsupported spectrum: {reason} (eigenvalue {eigenvalue})")]
    Spectrum { eigenvalue: C64, reason: String },

    #[error("argument {at} hits the pole at eigenvalue {eigenvalue} of -Q{context}")]
    Pole { at: C64, eigenvalue: C64, context: String },

    #[error("logarithm branch cut: transform value {value} at argument {at}")]
    Branch { at: C64, value: C64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("{what} did not converge within {terms} terms")]
    NonConvergence { what: &'static str, terms: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error(
        "residue system is singular (condition number {condition:.3e}); \
         perturb the model parameters or the threshold slightly"
    )]
    SingularSystem { condition: f64 },

    #[error("numerical consistency failure: {0}")]
    NumericalConsistency(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("root bracketing failed: {0}")]
    Bracket(String),

    #[error("embedding violated: {0}")]
    Embedding(String),
}

impl Error {
    /// True for errors caused by inputs rather than numerical breakdown.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidGenerator(_)
                | Error::InvalidInitial(_)
                | Error::Spectrum { .. }
                | Error::InvalidParameter(_)
                | Error::Precondition(_)
        )
    }
}
