//! Hermitian eigendecomposition and least squares, via nalgebra.

use nalgebra::DMatrix;

use super::{C64, CKet, CMatrix};
use crate::error::{Error, Result};

/// Eigendecomposition of a hermitian matrix. Eigenvalues are sorted in
/// descending order; each eigenvector's global phase makes its
/// largest-magnitude amplitude real and positive.
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: Vec<CKet>,
}

fn to_na(m: &CMatrix) -> DMatrix<C64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m.at(i, j))
}

/// Eigendecomposition of a hermitian matrix. The input must be hermitian
/// within `tol` in Frobenius norm; it is symmetrized before factorization so
/// the output is exactly self-consistent.
pub fn eig_hermitian(a: &CMatrix, tol: f64) -> Result<HermitianEigen> {
    let dev = a.hermitian_deviation();
    if dev > tol {
        return Err(Error::NotHermitian { deviation: dev });
    }
    let sym = a.add(&a.dagger())?.scale(C64::new(0.5, 0.0));
    let se = to_na(&sym).symmetric_eigen();
    let n = a.rows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| se.eigenvalues[j].partial_cmp(&se.eigenvalues[i]).expect("finite"));
    let mut values = Vec::with_capacity(n);
    let mut vectors = Vec::with_capacity(n);
    for &k in &order {
        values.push(se.eigenvalues[k]);
        let col: Vec<C64> = (0..n).map(|i| se.eigenvectors[(i, k)]).collect();
        vectors.push(CKet::new(col)?.fix_phase());
    }
    Ok(HermitianEigen { values, vectors })
}

/// Least-squares solution of `a x = b` for matrix right-hand sides.
pub struct LstsqSolution {
    /// Minimum-norm solution, one column per right-hand-side column.
    pub solution: CMatrix,
    /// Frobenius norm of `a * solution - b`.
    pub residual: f64,
}

/// Minimum-norm least squares via SVD. Shapes: `a` is m x n, `b` is m x k.
pub fn lstsq(a: &CMatrix, b: &CMatrix) -> Result<LstsqSolution> {
    if a.rows() != b.rows() {
        return Err(Error::shape(format!(
            "least squares with {} equations but {} right-hand-side rows",
            a.rows(),
            b.rows()
        )));
    }
    let svd = to_na(a).svd(true, true);
    let sol = svd
        .solve(&to_na(b), 1e-13)
        .map_err(|e| Error::Numerical { detail: format!("svd solve failed: {e}") })?;
    let mut solution = CMatrix::zeros(a.cols(), b.cols());
    for i in 0..a.cols() {
        for j in 0..b.cols() {
            solution.set(i, j, sol[(i, j)]);
        }
    }
    let residual = a.mul(&solution)?.sub(b)?.frob_norm();
    Ok(LstsqSolution { solution, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::frob_inner;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn pauli_z_spectrum() {
        let sz = CMatrix::from_rows(&[vec![c(1.0, 0.0), c(0.0, 0.0)], vec![c(0.0, 0.0), c(-1.0, 0.0)]])
            .unwrap();
        let e = eig_hermitian(&sz, 1e-12).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-12);
        assert!((e.values[1] + 1.0).abs() < 1e-12);
        assert!(e.vectors[0].approx_eq(&CKet::basis(2, 0).unwrap(), 1e-12));
    }

    #[test]
    fn sigma_y_tensor_sigma_x_eigenvalues_are_pm_one_doubled() {
        let sy = CMatrix::from_rows(&[vec![c(0.0, 0.0), c(0.0, -1.0)], vec![c(0.0, 1.0), c(0.0, 0.0)]])
            .unwrap();
        let sx = CMatrix::from_rows(&[vec![c(0.0, 0.0), c(1.0, 0.0)], vec![c(1.0, 0.0), c(0.0, 0.0)]])
            .unwrap();
        let e = eig_hermitian(&sy.kron(&sx), 1e-12).unwrap();
        let want = [1.0, 1.0, -1.0, -1.0];
        for (v, w) in e.values.iter().zip(want) {
            assert!((v - w).abs() < 1e-12);
        }
    }

    #[test]
    fn reconstruction_matches_input() {
        // random-ish hermitian 4x4
        let mut m = CMatrix::zeros(4, 4);
        let mut v = 0.3;
        for i in 0..4 {
            for j in 0..4 {
                v = (v * 37.7 + 0.1) % 2.0 - 1.0;
                m.set(i, j, c(v, v * 0.5 - 0.2));
            }
        }
        let h = m.add(&m.dagger()).unwrap().scale(c(0.5, 0.0));
        let e = eig_hermitian(&h, 1e-10).unwrap();
        let mut rec = CMatrix::zeros(4, 4);
        for (lam, vec) in e.values.iter().zip(&e.vectors) {
            rec = rec.add(&vec.outer(vec).scale(c(*lam, 0.0))).unwrap();
        }
        assert!(rec.sub(&h).unwrap().frob_norm() < 1e-10);
        // eigenvectors orthonormal
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                let ov = e.vectors[i].inner(&e.vectors[j]).unwrap();
                assert!((ov - c(want, 0.0)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn non_hermitian_rejected() {
        let m = CMatrix::from_rows(&[vec![c(0.0, 0.0), c(1.0, 0.0)], vec![c(0.0, 0.0), c(0.0, 0.0)]])
            .unwrap();
        assert!(matches!(eig_hermitian(&m, 1e-12), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn lstsq_exact_system() {
        let a = CMatrix::from_rows(&[
            vec![c(1.0, 0.0), c(0.0, 0.0)],
            vec![c(0.0, 1.0), c(1.0, 0.0)],
            vec![c(0.0, 0.0), c(2.0, 0.0)],
        ])
        .unwrap();
        let x = CMatrix::from_rows(&[vec![c(1.0, -1.0)], vec![c(0.5, 0.25)]]).unwrap();
        let b = a.mul(&x).unwrap();
        let s = lstsq(&a, &b).unwrap();
        assert!(s.residual < 1e-12);
        assert!(s.solution.approx_eq(&x, 1e-10));
    }

    #[test]
    fn lstsq_minimum_norm_on_rank_deficient() {
        // two identical columns: solution splits weight evenly
        let a = CMatrix::from_rows(&[vec![c(1.0, 0.0), c(1.0, 0.0)], vec![c(0.0, 0.0), c(0.0, 0.0)]])
            .unwrap();
        let b = CMatrix::from_rows(&[vec![c(2.0, 0.0)], vec![c(0.0, 0.0)]]).unwrap();
        let s = lstsq(&a, &b).unwrap();
        assert!(s.residual < 1e-12);
        assert!((s.solution.at(0, 0) - c(1.0, 0.0)).norm() < 1e-10);
        assert!((s.solution.at(1, 0) - c(1.0, 0.0)).norm() < 1e-10);
        let _ = frob_inner(&a, &a).unwrap();
    }
}
