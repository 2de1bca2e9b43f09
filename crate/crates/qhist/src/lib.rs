//! History states for closed quantum systems.
//!
//! A history assigns an operator to each of several times; `history` builds
//! those chains and the chain operator that maps them to ordinary matrices,
//! `family` validates orthogonal, complete sets of histories and decomposes
//! states in them, `observables` diagonalizes commuting history operators
//! into eigenhistory families, and `marking` couples a system to ancilla
//! registers so a history family can be read out by measuring the ancillas.
//! `scenario` and `report` drive all of it from JSON descriptions.
//!
//! Dense complex matrices stay small here (a few hundred rows at most), so
//! `linalg` keeps a plain row-major representation and delegates
//! eigendecomposition and least squares to nalgebra.

pub mod error;
pub mod family;
pub mod history;
pub mod linalg;
pub mod marking;
pub mod observables;
pub mod registry;
pub mod report;
pub mod scenario;

pub use error::{Error, Result};

/// Default numerical tolerance for validation and comparison.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Default seed for the deterministic random choices inside
/// [`observables::observable_family`].
pub const DEFAULT_SEED: u64 = 7;
