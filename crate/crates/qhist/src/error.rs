//! Error type shared by the math modules.

use thiserror::Error;

/// Result alias for fallible operations in this crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by matrix, history, family, observable and marking
/// operations. Scenario loading has its own error type in
/// [`crate::scenario`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {context}")]
    ShapeMismatch { context: String },

    #[error("non-finite entry in {context}")]
    NonFinite { context: String },

    #[error("vector is not normalized (norm {norm})")]
    NormalizationError { norm: f64 },

    #[error("matrix is not hermitian (deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("matrix is not unitary on the smaller space (deviation {deviation:.3e})")]
    NotUnitary { deviation: f64 },

    #[error("history states live on different timelines")]
    TimelineMismatch,

    #[error("history state has zero weight within tolerance")]
    ZeroWeight,

    #[error("history state is not normalized (weight {weight})")]
    NotNormalized { weight: f64 },

    #[error("family has not passed validation")]
    FamilyNotValidated,

    #[error("constructed family fails validation: {detail}")]
    FamilyInvalid { detail: String },

    #[error("operators {i} and {j} do not commute (deviation {deviation:.3e})")]
    NonCommuting { i: usize, j: usize, deviation: f64 },

    #[error("invalid marking step: {detail}")]
    InvalidStep { detail: String },

    #[error("measurement basis is not orthonormal")]
    BasisNotOrthonormal,

    #[error("family is not aligned with the marking schedule: {detail} (residual {residual:.3e})")]
    Misaligned { residual: f64, detail: String },

    #[error("unknown name {name:?}")]
    UnknownName { name: String },

    #[error("numerical routine failed: {detail}")]
    Numerical { detail: String },
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>) -> Self {
        Error::ShapeMismatch { context: context.into() }
    }
}
