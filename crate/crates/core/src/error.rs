use thiserror::Error;

use crate::basis::BasisOp;

/// Errors raised by evaluation, differentiation, scheduling and solving.
///
/// Step and position indices are zero-based.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdError {
    #[error("step {step}: `{op}` evaluated outside its domain")]
    Domain { step: usize, op: BasisOp },

    #[error("step {step}: local linearization is singular (|a| = {magnitude:e})")]
    SingularStep { step: usize, magnitude: f64 },

    #[error("step {step}: `{op}` has no local inverse for the overwritten operand")]
    NoLocalInverse { step: usize, op: BasisOp },

    #[error("cut {cut}: live active width is {width}, expected {expected}")]
    WidthViolation { cut: usize, width: usize, expected: usize },

    #[error("schedule position {position}: live active width fell to {width} < {n}; the Jacobian is singular")]
    WidthUnderflow { position: usize, width: usize, n: usize },

    #[error("{nodes} nodes exceeds the exhaustive-search limit of {limit}")]
    SizeLimit { nodes: usize, limit: usize },

    #[error("lump {lump}: block A is singular (pivot {pivot:e})")]
    SingularLump { lump: usize, pivot: f64 },

    #[error("matrix is singular (pivot {pivot:e})")]
    SingularMatrix { pivot: f64 },

    #[error("newton did not converge in {iterations} iterations (best residual {residual:e})")]
    MaxItersExceeded {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid program: {0}")]
    InvalidProgram(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl AdError {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            AdError::Domain { .. } => "DomainError",
            AdError::SingularStep { .. } => "SingularStepError",
            AdError::NoLocalInverse { .. } => "NoLocalInverseError",
            AdError::WidthViolation { .. } => "WidthViolation",
            AdError::WidthUnderflow { .. } => "WidthUnderflowError",
            AdError::SizeLimit { .. } => "SizeLimitError",
            AdError::SingularLump { .. } => "SingularLumpError",
            AdError::SingularMatrix { .. } => "SingularMatrixError",
            AdError::MaxItersExceeded { .. } => "MaxItersExceeded",
            AdError::DimensionMismatch { .. } => "DimensionMismatch",
            AdError::InvalidProgram(_) | AdError::InvalidArgument(_) => "ValidationError",
        }
    }
}

pub type Result<T, E = AdError> = std::result::Result<T, E>;

pub(crate) fn check_len(expected: usize, v: &[f64]) -> Result<()> {
    if v.len() != expected {
        return Err(AdError::DimensionMismatch {
            expected,
            got: v.len(),
        });
    }
    Ok(())
}
