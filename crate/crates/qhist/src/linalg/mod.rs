//! Minimal dense complex linear algebra.
//!
//! Everything in this crate works on small matrices (dimension 64 or less),
//! so the storage is a plain row-major `Vec<Complex64>`. Eigendecomposition
//! and least squares go through nalgebra; the rest is implemented directly.

mod eig;
mod ket;
mod matrix;

pub use eig::{eig_hermitian, lstsq, HermitianEigen, LstsqSolution};
pub use ket::CKet;
pub use matrix::{frob_inner, CMatrix};

/// Complex scalar used throughout the crate.
pub type C64 = num_complex::Complex64;

/// Shorthand for a real complex scalar.
pub(crate) fn cr(re: f64) -> C64 {
    C64::new(re, 0.0)
}
