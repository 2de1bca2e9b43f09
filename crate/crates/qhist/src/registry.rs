//! Named kets and gates.
//!
//! Scenario files refer to vectors and matrices by name. The registry starts
//! with the standard spin-1/2 kets and single-qubit gates and grows with the
//! definitions a scenario adds. Identity matrices of any dimension resolve
//! through the `I(d)` form.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};
use crate::linalg::{C64, CKet, CMatrix};

/// Name-to-value store for kets and gates.
#[derive(Clone, Debug, Default)]
pub struct Registry {
    kets: BTreeMap<String, CKet>,
    gates: BTreeMap<String, CMatrix>,
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

impl Registry {
    /// Empty registry.
    pub fn new() -> Self {
        Registry::default()
    }

    /// Registry with the spin-1/2 basis kets (`z+`, `z-`, `x+`, `x-`, `y+`,
    /// `y-`, plus computational `0` and `1`) and the gates `H`, `sx`, `sy`,
    /// `sz`.
    pub fn with_builtins() -> Self {
        let mut r = Registry::new();
        let h = FRAC_1_SQRT_2;
        let ket = |amps: Vec<C64>| CKet::new(amps).expect("builtin ket");
        r.kets.insert("z+".into(), ket(vec![c(1.0, 0.0), c(0.0, 0.0)]));
        r.kets.insert("z-".into(), ket(vec![c(0.0, 0.0), c(1.0, 0.0)]));
        r.kets.insert("x+".into(), ket(vec![c(h, 0.0), c(h, 0.0)]));
        r.kets.insert("x-".into(), ket(vec![c(h, 0.0), c(-h, 0.0)]));
        r.kets.insert("y+".into(), ket(vec![c(h, 0.0), c(0.0, h)]));
        r.kets.insert("y-".into(), ket(vec![c(h, 0.0), c(0.0, -h)]));
        r.kets.insert("0".into(), ket(vec![c(1.0, 0.0), c(0.0, 0.0)]));
        r.kets.insert("1".into(), ket(vec![c(0.0, 0.0), c(1.0, 0.0)]));
        let gate = |rows: &[Vec<C64>]| CMatrix::from_rows(rows).expect("builtin gate");
        r.gates.insert(
            "H".into(),
            gate(&[vec![c(h, 0.0), c(h, 0.0)], vec![c(h, 0.0), c(-h, 0.0)]]),
        );
        r.gates.insert(
            "sx".into(),
            gate(&[vec![c(0.0, 0.0), c(1.0, 0.0)], vec![c(1.0, 0.0), c(0.0, 0.0)]]),
        );
        r.gates.insert(
            "sy".into(),
            gate(&[vec![c(0.0, 0.0), c(0.0, -1.0)], vec![c(0.0, 1.0), c(0.0, 0.0)]]),
        );
        r.gates.insert(
            "sz".into(),
            gate(&[vec![c(1.0, 0.0), c(0.0, 0.0)], vec![c(0.0, 0.0), c(-1.0, 0.0)]]),
        );
        r
    }

    /// Adds a ket; rejects redefinition so scenarios cannot shadow builtins.
    pub fn insert_ket(&mut self, name: &str, ket: CKet) -> Result<()> {
        if self.kets.contains_key(name) {
            return Err(Error::shape(format!("ket name {name:?} is already defined")));
        }
        self.kets.insert(name.to_string(), ket);
        Ok(())
    }

    /// Adds a gate; rejects redefinition.
    pub fn insert_gate(&mut self, name: &str, gate: CMatrix) -> Result<()> {
        if self.gates.contains_key(name) {
            return Err(Error::shape(format!("gate name {name:?} is already defined")));
        }
        self.gates.insert(name.to_string(), gate);
        Ok(())
    }

    /// Looks up a ket by name.
    pub fn ket(&self, name: &str) -> Result<CKet> {
        self.kets
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownName { name: name.to_string() })
    }

    /// Looks up a gate by name. Supports `I(d)` for identities of any
    /// positive dimension.
    pub fn gate(&self, name: &str) -> Result<CMatrix> {
        if let Some(g) = self.gates.get(name) {
            return Ok(g.clone());
        }
        if let Some(d) = parse_identity(name) {
            return Ok(CMatrix::identity(d));
        }
        Err(Error::UnknownName { name: name.to_string() })
    }

    /// The rank-one projector onto a named ket.
    pub fn projector(&self, name: &str, tol: f64) -> Result<CMatrix> {
        self.ket(name)?.projector(tol)
    }
}

/// Parses the `I(d)` identity form; returns the dimension.
fn parse_identity(name: &str) -> Option<usize> {
    let inner = name.strip_prefix("I(")?.strip_suffix(')')?;
    if inner.is_empty() || inner.len() > 4 || !inner.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let d: usize = inner.parse().ok()?;
    (d >= 1).then_some(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_kets_are_normalized_and_mutually_unbiased() {
        let r = Registry::with_builtins();
        for name in ["z+", "z-", "x+", "x-", "y+", "y-"] {
            assert!(r.ket(name).unwrap().is_normalized(1e-12), "{name}");
        }
        let zp = r.ket("z+").unwrap();
        let xp = r.ket("x+").unwrap();
        let yp = r.ket("y+").unwrap();
        assert!((zp.inner(&xp).unwrap().norm_sqr() - 0.5).abs() < 1e-12);
        assert!((xp.inner(&yp).unwrap().norm_sqr() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn identity_form_parses() {
        let r = Registry::with_builtins();
        assert_eq!(r.gate("I(4)").unwrap().rows(), 4);
        assert!(r.gate("I(0)").is_err());
        assert!(r.gate("I()").is_err());
        assert!(r.gate("I(12x)").is_err());
        assert!(r.gate("Hh").is_err());
    }

    #[test]
    fn redefinition_rejected() {
        let mut r = Registry::with_builtins();
        let v = CKet::basis(2, 0).unwrap();
        assert!(r.insert_ket("z+", v.clone()).is_err());
        assert!(r.insert_ket("fresh", v).is_ok());
    }
}
