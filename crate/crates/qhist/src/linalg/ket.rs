//! Complex column vectors.

use std::fmt;

use super::{C64, CMatrix};
use crate::error::{Error, Result};

/// Complex ket (column vector).
#[derive(Clone, PartialEq)]
pub struct CKet {
    data: Vec<C64>,
}

impl CKet {
    pub fn new(data: Vec<C64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::shape("ket needs at least one amplitude"));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite { context: "ket amplitudes".into() });
        }
        Ok(CKet { data })
    }

    /// Computational basis vector `|k>` in dimension `dim`.
    pub fn basis(dim: usize, k: usize) -> Result<Self> {
        if k >= dim {
            return Err(Error::shape(format!("basis index {k} out of range for dimension {dim}")));
        }
        let mut data = vec![C64::ZERO; dim];
        data[k] = C64::new(1.0, 0.0);
        Ok(CKet { data })
    }

    pub fn zeros(dim: usize) -> Self {
        CKet { data: vec![C64::ZERO; dim] }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn at(&self, i: usize) -> C64 {
        self.data[i]
    }

    pub fn set(&mut self, i: usize, v: C64) {
        self.data[i] = v;
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.data
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.norm() - 1.0).abs() <= tol
    }

    pub fn scale(&self, c: C64) -> Self {
        CKet { data: self.data.iter().map(|z| z * c).collect() }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::shape(format!("cannot add kets of dimension {} and {}", self.dim(), other.dim())));
        }
        Ok(CKet { data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect() })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }

    /// Rescales to unit norm.
    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n <= 1e-300 {
            return Err(Error::NormalizationError { norm: n });
        }
        Ok(self.scale(C64::new(1.0 / n, 0.0)))
    }

    /// Inner product `<self|other>`, antilinear in `self`.
    pub fn inner(&self, other: &Self) -> Result<C64> {
        if self.dim() != other.dim() {
            return Err(Error::shape(format!(
                "inner product of kets with dimension {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a.conj() * b).sum())
    }

    /// Outer product `|self><other|`.
    pub fn outer(&self, other: &Self) -> CMatrix {
        let mut m = CMatrix::zeros(self.dim(), other.dim());
        for i in 0..self.dim() {
            for j in 0..other.dim() {
                m.set(i, j, self.data[i] * other.data[j].conj());
            }
        }
        m
    }

    /// Rank-one projector `|self><self|`. The ket must be normalized.
    pub fn projector(&self, tol: f64) -> Result<CMatrix> {
        if !self.is_normalized(tol) {
            return Err(Error::NormalizationError { norm: self.norm() });
        }
        Ok(self.outer(self))
    }

    /// Kronecker product; `self` indexes the slower (leftmost) factor.
    pub fn kron(&self, other: &Self) -> Self {
        let mut data = Vec::with_capacity(self.dim() * other.dim());
        for a in &self.data {
            for b in &other.data {
                data.push(a * b);
            }
        }
        CKet { data }
    }

    /// Applies a matrix: `m * self`.
    pub fn apply(&self, m: &CMatrix) -> Result<Self> {
        if m.cols() != self.dim() {
            return Err(Error::shape(format!(
                "cannot apply {}x{} matrix to ket of dimension {}",
                m.rows(),
                m.cols(),
                self.dim()
            )));
        }
        let mut data = vec![C64::ZERO; m.rows()];
        for (i, slot) in data.iter_mut().enumerate() {
            *slot = (0..m.cols()).map(|j| m.at(i, j) * self.data[j]).sum();
        }
        Ok(CKet { data })
    }

    /// Entry-wise comparison within `tol`.
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.dim() == other.dim()
            && self.data.iter().zip(&other.data).all(|(a, b)| (a - b).norm() <= tol)
    }

    /// True when the kets agree up to one global phase.
    pub fn eq_up_to_phase(&self, other: &Self, tol: f64) -> bool {
        if self.dim() != other.dim() {
            return false;
        }
        match self.inner(other) {
            Ok(ov) => {
                let n1 = self.norm();
                let n2 = other.norm();
                (ov.norm() - n1 * n2).abs() <= tol * (1.0 + n1 * n2)
            }
            Err(_) => false,
        }
    }

    /// Multiplies by the global phase that makes the largest-magnitude
    /// amplitude real and positive (ties go to the lowest index).
    pub fn fix_phase(&self) -> Self {
        let mut best = 0usize;
        let mut best_mag = 0.0f64;
        for (i, z) in self.data.iter().enumerate() {
            let m = z.norm();
            if m > best_mag + 1e-12 {
                best = i;
                best_mag = m;
            }
        }
        if best_mag <= 1e-300 {
            return self.clone();
        }
        let phase = self.data[best] / C64::new(best_mag, 0.0);
        self.scale(phase.conj())
    }
}

impl fmt::Debug for CKet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> =
            self.data.iter().map(|z| format!("{:+.4}{:+.4}i", z.re, z.im)).collect();
        write!(f, "CKet[{}]", parts.join(", "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projector_requires_normalization() {
        let v = CKet::new(vec![C64::new(1.0, 0.0), C64::new(1.0, 0.0)]).unwrap();
        assert!(matches!(v.projector(1e-10), Err(Error::NormalizationError { .. })));
        let u = v.normalized().unwrap();
        let p = u.projector(1e-10).unwrap();
        assert!(p.projector_deviation() < 1e-12);
    }

    #[test]
    fn phase_fix_makes_leading_amplitude_positive() {
        let v = CKet::new(vec![C64::new(0.0, -0.5), C64::new(-0.5, 0.0)]).unwrap();
        let w = v.fix_phase();
        assert!(w.at(0).im.abs() < 1e-15);
        assert!(w.at(0).re > 0.0);
        assert!(v.eq_up_to_phase(&w, 1e-12));
    }

    #[test]
    fn kron_order_is_left_slow() {
        let a = CKet::new(vec![C64::new(1.0, 0.0), C64::new(2.0, 0.0)]).unwrap();
        let b = CKet::new(vec![C64::new(3.0, 0.0), C64::new(5.0, 0.0)]).unwrap();
        let k = a.kron(&b);
        let want = [3.0, 5.0, 6.0, 10.0];
        for (i, w) in want.iter().enumerate() {
            assert!((k.at(i) - C64::new(*w, 0.0)).norm() < 1e-15);
        }
    }
}
