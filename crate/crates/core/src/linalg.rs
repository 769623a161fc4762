//! Small dense linear-algebra helpers shared by the analysis modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative singular-value cutoff used for Gram pseudoinverses.
pub const PINV_RELATIVE_CUTOFF: f64 = 1e-10;

/// Relative asymmetry below which a matrix is silently symmetrized.
pub const SYMMETRY_TOL: f64 = 1e-12;

pub fn sym_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Largest absolute entry of `a - a^T` relative to the largest absolute entry of `a`.
pub fn relative_asymmetry(a: &DMatrix<f64>) -> f64 {
    let scale = a.amax();
    if scale == 0.0 {
        return 0.0;
    }
    (a - a.transpose()).amax() / scale
}

/// Symmetrize `m` if it is symmetric up to rounding and confirm it is positive definite.
///
/// Returns the symmetrized matrix. `t` is only used for diagnostics.
pub fn check_spd(m: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::NonSPDMetric {
            t,
            reason: format!("matrix is {}x{}", m.nrows(), m.ncols()),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonSPDMetric {
            t,
            reason: "non-finite entry".into(),
        });
    }
    let asym = relative_asymmetry(m);
    if asym > SYMMETRY_TOL {
        return Err(Error::NonSPDMetric {
            t,
            reason: format!("relative asymmetry {asym:e}"),
        });
    }
    let sym = sym_part(m);
    if sym.clone().cholesky().is_none() {
        return Err(Error::NonSPDMetric {
            t,
            reason: "Cholesky factorization failed (non-positive eigenvalue)".into(),
        });
    }
    Ok(sym)
}

/// Moore-Penrose pseudoinverse of a symmetric positive semidefinite matrix.
///
/// Eigenvalues below `PINV_RELATIVE_CUTOFF * max_eigenvalue` are treated as zero.
/// Returns the pseudoinverse and the numerical rank.
pub fn pinv_psd(g: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let n = g.nrows();
    if n == 0 {
        return (DMatrix::zeros(0, 0), 0);
    }
    let eig = SymmetricEigen::new(sym_part(g));
    let sigma_max = eig.eigenvalues.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let cutoff = PINV_RELATIVE_CUTOFF * sigma_max;
    let mut out = DMatrix::zeros(n, n);
    let mut rank = 0;
    for (i, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev.abs() > cutoff && sigma_max > 0.0 {
            rank += 1;
            let v = eig.eigenvectors.column(i);
            out += (v * v.transpose()) / ev;
        }
    }
    (out, rank)
}

/// Orthonormal basis of the null space of the rows of `rows` (k x n).
///
/// Uses Householder QR with column pivoting on `rows^T`; the trailing columns
/// of the accumulated orthogonal factor span the null space. Each returned
/// column is flipped so its first significant entry is positive.
pub fn null_space(rows: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let k = rows.nrows();
    if k == 0 {
        return DMatrix::identity(n, n);
    }
    let mut b = rows.transpose(); // n x k
    let mut q = DMatrix::<f64>::identity(n, n);
    let max_norm = (0..k).map(|j| b.column(j).norm()).fold(0.0_f64, f64::max);
    let tol = PINV_RELATIVE_CUTOFF * max_norm;
    let mut rank = 0;
    for step in 0..k.min(n) {
        // pivot: remaining column with the largest trailing norm
        let (pivot, pnorm) = (step..k)
            .map(|j| (j, b.view((step, j), (n - step, 1)).norm()))
            .fold((step, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pnorm <= tol || max_norm == 0.0 {
            break;
        }
        b.swap_columns(step, pivot);
        let x = b.view((step, step), (n - step, 1)).clone_owned();
        let alpha = if x[0] >= 0.0 { -pnorm } else { pnorm };
        let mut v = x;
        v[0] -= alpha;
        let vnorm = v.norm();
        if vnorm > 0.0 {
            v /= vnorm;
            // B[step.., step..] -= 2 v (v^T B)
            let mut sub = b.view_mut((step, step), (n - step, k - step));
            let proj = v.transpose() * &sub;
            sub -= (&v * proj) * 2.0;
            // Q[:, step..] -= 2 (Q v) v^T
            let mut qsub = q.view_mut((0, step), (n, n - step));
            let qv = &qsub * &v;
            qsub -= (qv * v.transpose()) * 2.0;
        }
        rank += 1;
    }
    let mut basis = q.columns(rank, n - rank).clone_owned();
    canonicalize_signs(&mut basis);
    basis
}

/// Flip each column so that its first entry with magnitude above 1e-12 is positive.
pub fn canonicalize_signs(basis: &mut DMatrix<f64>) {
    for mut col in basis.column_iter_mut() {
        let scale = col.amax().max(f64::MIN_POSITIVE);
        if let Some(first) = col.iter().copied().find(|v| v.abs() > 1e-12 * scale) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
}

/// Extreme eigenvalues of the symmetric-definite pencil `a v = lambda b v`.
///
/// `b` is whitened with its Cholesky factor `L`, and the symmetric matrix
/// `L^-1 a L^-T` is diagonalized.
pub fn generalized_extremes(a: &DMatrix<f64>, b: &DMatrix<f64>, t: f64) -> Result<(f64, f64)> {
    let chol = sym_part(b).cholesky().ok_or_else(|| Error::NonSPDMetric {
        t,
        reason: "projected metric G^T M G is not positive definite".into(),
    })?;
    let l = chol.l();
    let linv_a = l
        .solve_lower_triangular(&sym_part(a))
        .expect("Cholesky factor is nonsingular");
    let whitened = l
        .solve_lower_triangular(&linv_a.transpose())
        .expect("Cholesky factor is nonsingular");
    let eig = SymmetricEigen::new(sym_part(&whitened));
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((min, max))
}

pub fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_space_of_parabola_gradient() {
        let rows = DMatrix::from_row_slice(1, 2, &[2.0, 1.0]);
        let ns = null_space(&rows, 2);
        let s5 = 5f64.sqrt();
        assert_eq!(ns.ncols(), 1);
        assert!((ns[(0, 0)] - 1.0 / s5).abs() < 1e-15);
        assert!((ns[(1, 0)] + 2.0 / s5).abs() < 1e-15);
    }

    #[test]
    fn null_space_rank_deficient_rows() {
        let rows = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 2.0, 2.0, 0.0]);
        let ns = null_space(&rows, 3);
        assert_eq!(ns.ncols(), 2);
        let gram = ns.transpose() * &ns;
        assert!((gram - DMatrix::identity(2, 2)).amax() < 1e-14);
        assert!((rows * ns).amax() < 1e-14);
    }

    #[test]
    fn pinv_of_duplicated_rank_one() {
        let g = DMatrix::from_row_slice(2, 2, &[4.0, 4.0, 4.0, 4.0]);
        let (p, rank) = pinv_psd(&g);
        assert_eq!(rank, 1);
        // G G+ G = G
        assert!((&g * &p * &g - &g).amax() < 1e-12);
        assert!((p[(0, 0)] - 1.0 / 16.0).abs() < 1e-14);
    }

    #[test]
    fn spd_check_rejects_asymmetric_and_indefinite() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(check_spd(&asym, 0.0).is_err());
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(check_spd(&indef, 0.0).is_err());
        let tiny = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0 + 1e-15, 2.0]);
        let fixed = check_spd(&tiny, 0.0).unwrap();
        assert_eq!(fixed[(0, 1)], fixed[(1, 0)]);
    }

    #[test]
    fn generalized_pencil_scaled_metric() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let a = &m * -0.5;
        let (lo, hi) = generalized_extremes(&a, &m, 0.0).unwrap();
        assert!((lo + 0.5).abs() < 1e-14 && (hi + 0.5).abs() < 1e-14);
    }
}
