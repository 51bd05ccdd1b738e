//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("gradient undefined at boundary")]
    BoundaryNode,

    #[error("position outside the sampling domain")]
    OutOfDomain,

    #[error("causal domain violated")]
    CausalDomainViolated,

    #[error("field blow-up or instability")]
    FieldBlowUp,

    #[error("insufficient history: {0}")]
    InsufficientHistory(String),

    #[error("cone exits grid")]
    ConeExitsGrid,

    #[error("omega must be a unit vector")]
    NonUnitOmega,

    #[error("quadrature did not converge: achieved {achieved:.3e}, requested {requested:.3e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("lemma inapplicable for a={a}, b={b}")]
    LemmaInapplicable { a: f64, b: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
