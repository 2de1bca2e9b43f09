//! Row-major dense complex matrix.

use std::fmt;

use super::{cr, C64};
use crate::error::{Error, Result};

/// Dense complex matrix, row-major.
#[derive(Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    /// Builds a matrix from row-major data. Rejects empty shapes, length
    /// mismatches and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape(format!("matrix dimensions must be positive, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite { context: "matrix entries".into() });
        }
        Ok(CMatrix { rows, cols, data })
    }

    /// Builds a matrix from nested rows.
    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::shape("matrix needs at least one row"));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("rows have inconsistent lengths"));
        }
        CMatrix::new(rows.len(), cols, rows.concat())
    }

    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix { rows, cols, data: vec![C64::ZERO; rows * cols] }
    }

    /// Identity matrix of dimension `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = CMatrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = cr(1.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn at(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.data[i * self.cols + j] = v;
    }

    /// Row-major entries.
    pub fn entries(&self) -> &[C64] {
        &self.data
    }

    /// Conjugate transpose.
    pub fn dagger(&self) -> Self {
        let mut out = CMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.at(i, j).conj();
            }
        }
        out
    }

    /// Entry-wise complex conjugate.
    pub fn conj(&self) -> Self {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn scale(&self, c: C64) -> Self {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * c).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::shape(format!(
                "cannot add {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(CMatrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(cr(-1.0)))
    }

    /// Matrix product `self * other`.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = CMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(i, k);
                if a == C64::ZERO {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.at(k, j);
                }
            }
        }
        Ok(out)
    }

    /// Kronecker product; `self` indexes the slower (leftmost) factor.
    pub fn kron(&self, other: &Self) -> Self {
        let rows = self.rows * other.rows;
        let cols = self.cols * other.cols;
        let mut out = CMatrix::zeros(rows, cols);
        for i1 in 0..self.rows {
            for j1 in 0..self.cols {
                let a = self.at(i1, j1);
                if a == C64::ZERO {
                    continue;
                }
                for i2 in 0..other.rows {
                    for j2 in 0..other.cols {
                        out.data[(i1 * other.rows + i2) * cols + (j1 * other.cols + j2)] =
                            a * other.at(i2, j2);
                    }
                }
            }
        }
        out
    }

    pub fn trace(&self) -> Result<C64> {
        if !self.is_square() {
            return Err(Error::shape(format!("trace of non-square {}x{}", self.rows, self.cols)));
        }
        Ok((0..self.rows).map(|i| self.at(i, i)).sum())
    }

    /// Frobenius norm.
    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// The matrix flattened row-major into a single column.
    pub fn flatten_column(&self) -> CMatrix {
        CMatrix { rows: self.data.len(), cols: 1, data: self.data.clone() }
    }

    /// Largest entry magnitude.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Entry-wise comparison within `tol`.
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| (a - b).norm() <= tol)
    }

    /// Deviation from hermiticity, `norm(a - a^dagger)`.
    pub fn hermitian_deviation(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        self.sub(&self.dagger()).map(|d| d.frob_norm()).unwrap_or(f64::INFINITY)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_deviation() <= tol
    }

    /// Deviation from being an isometry on the smaller space: for a tall or
    /// square matrix `norm(T^dagger T - I)`, for a wide one
    /// `norm(T T^dagger - I)`.
    pub fn unitary_deviation(&self) -> f64 {
        let (gram, n) = if self.rows >= self.cols {
            (self.dagger().mul(self).expect("shapes agree"), self.cols)
        } else {
            (self.mul(&self.dagger()).expect("shapes agree"), self.rows)
        };
        gram.sub(&CMatrix::identity(n)).expect("square").frob_norm()
    }

    pub fn is_isometry(&self, tol: f64) -> bool {
        self.unitary_deviation() <= tol
    }

    /// Deviation from being an orthogonal projector: hermiticity plus
    /// idempotence.
    pub fn projector_deviation(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let idem = self
            .mul(self)
            .and_then(|sq| sq.sub(self))
            .map(|d| d.frob_norm())
            .unwrap_or(f64::INFINITY);
        self.hermitian_deviation().max(idem)
    }
}

/// Frobenius (Hilbert-Schmidt) inner product `tr(a^dagger b)`, antilinear in
/// the first argument.
pub fn frob_inner(a: &CMatrix, b: &CMatrix) -> Result<C64> {
    if a.rows != b.rows || a.cols != b.cols {
        return Err(Error::shape(format!(
            "frobenius inner product of {}x{} and {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| x.conj() * y).sum())
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            let row: Vec<String> = (0..self.cols)
                .map(|j| {
                    let z = self.at(i, j);
                    format!("{:+.4}{:+.4}i", z.re, z.im)
                })
                .collect();
            writeln!(f, "  {}", row.join(" "))?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn sigma_y() -> CMatrix {
        CMatrix::from_rows(&[vec![c(0.0, 0.0), c(0.0, -1.0)], vec![c(0.0, 1.0), c(0.0, 0.0)]])
            .unwrap()
    }

    fn sigma_x() -> CMatrix {
        CMatrix::from_rows(&[vec![c(0.0, 0.0), c(1.0, 0.0)], vec![c(1.0, 0.0), c(0.0, 0.0)]])
            .unwrap()
    }

    #[test]
    fn kron_of_paulis_places_blocks() {
        let k = sigma_y().kron(&sigma_x());
        assert_eq!((k.rows(), k.cols()), (4, 4));
        let expected = [
            ((0, 3), c(0.0, -1.0)),
            ((1, 2), c(0.0, -1.0)),
            ((2, 1), c(0.0, 1.0)),
            ((3, 0), c(0.0, 1.0)),
        ];
        for i in 0..4 {
            for j in 0..4 {
                let want = expected
                    .iter()
                    .find(|((r, c_), _)| *r == i && *c_ == j)
                    .map(|(_, v)| *v)
                    .unwrap_or(C64::ZERO);
                assert!((k.at(i, j) - want).norm() < 1e-15, "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn kron_projectors_z_plus_x_plus() {
        let zp = CMatrix::from_rows(&[vec![c(1.0, 0.0), c(0.0, 0.0)], vec![c(0.0, 0.0), c(0.0, 0.0)]])
            .unwrap();
        let xp = CMatrix::from_rows(&[vec![c(0.5, 0.0), c(0.5, 0.0)], vec![c(0.5, 0.0), c(0.5, 0.0)]])
            .unwrap();
        let k = zp.kron(&xp);
        // upper-left block is [x+], everything else zero
        for i in 0..4 {
            for j in 0..4 {
                let want = if i < 2 && j < 2 { c(0.5, 0.0) } else { C64::ZERO };
                assert!((k.at(i, j) - want).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn frob_inner_of_scaled_rank_one() {
        // a = |z-><z+| / 2, (a|a) = 1/4
        let a = CMatrix::from_rows(&[vec![c(0.0, 0.0), c(0.0, 0.0)], vec![c(0.5, 0.0), c(0.0, 0.0)]])
            .unwrap();
        let v = frob_inner(&a, &a).unwrap();
        assert!((v - c(0.25, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn frob_inner_shape_mismatch_errors() {
        let a = CMatrix::identity(2);
        let b = CMatrix::identity(3);
        assert!(matches!(frob_inner(&a, &b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn mixed_product_rule_holds() {
        let a = sigma_y();
        let b = sigma_x();
        let c_ = CMatrix::from_rows(&[vec![c(1.0, 1.0), c(0.0, 2.0)], vec![c(0.0, 0.0), c(3.0, 0.0)]])
            .unwrap();
        let d = CMatrix::from_rows(&[vec![c(0.0, 1.0), c(1.0, 0.0)], vec![c(2.0, 0.0), c(0.0, -1.0)]])
            .unwrap();
        let lhs = a.kron(&b).mul(&c_.kron(&d)).unwrap();
        let rhs = a.mul(&c_).unwrap().kron(&b.mul(&d).unwrap());
        assert!(lhs.approx_eq(&rhs, 1e-12));
    }

    #[test]
    fn unitary_deviation_detects_isometry() {
        // column isometry onto (|0> + |1>)/sqrt(2)
        let t = CMatrix::from_rows(&[vec![c(std::f64::consts::FRAC_1_SQRT_2, 0.0)], vec![c(
            std::f64::consts::FRAC_1_SQRT_2,
            0.0,
        )]])
        .unwrap();
        assert!(t.unitary_deviation() < 1e-15);
        let bad = CMatrix::from_rows(&[vec![c(1.0, 0.0)], vec![c(1.0, 0.0)]]).unwrap();
        assert!(bad.unitary_deviation() > 0.5);
    }

    #[test]
    fn non_finite_rejected() {
        let r = CMatrix::new(1, 1, vec![c(f64::NAN, 0.0)]);
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }
}
