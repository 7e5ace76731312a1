//! One-sided Jacobi SVD.
//!
//! The subspace machinery lives and dies by rank decisions on small dense
//! matrices, many of them projectors with singular values clustered at 0
//! and 1. The Golub–Kahan SVD shipped with the linear-algebra backend can
//! misfactor exactly that cluster pattern (returned factors drift off the
//! input by O(1e-1) on some 3x3 projector residuals), so we use a
//! one-sided Jacobi iteration instead: slower, but accurate to machine
//! precision on every matrix in our size range.

use nalgebra::DMatrix;

/// Thin SVD `a = u * diag(sigma) * v^T`.
///
/// `v` is always a complete `n x n` orthogonal matrix. `sigma` has length
/// `n` and is sorted descending. Columns of `u` with `sigma[j] = 0` are
/// zero vectors, not an orthonormal completion.
pub struct JacobiSvd {
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub v: DMatrix<f64>,
}

impl JacobiSvd {
    pub fn sigma_max(&self) -> f64 {
        self.sigma.first().copied().unwrap_or(0.0)
    }
}

/// One-sided Jacobi on the columns. Wide inputs are zero-padded to square
/// so the right factor is always complete.
pub fn jacobi_svd(a: &DMatrix<f64>) -> JacobiSvd {
    let (m, n) = (a.nrows(), a.ncols());
    if n == 0 {
        return JacobiSvd {
            u: DMatrix::zeros(m, 0),
            sigma: Vec::new(),
            v: DMatrix::zeros(0, 0),
        };
    }
    let rows = m.max(n);
    let mut b = DMatrix::<f64>::zeros(rows, n);
    b.view_mut((0, 0), (m, n)).copy_from(a);
    let mut v = DMatrix::<f64>::identity(n, n);

    let eps = f64::EPSILON;
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for i in 0..rows {
                    let bp = b[(i, p)];
                    let bq = b[(i, q)];
                    alpha += bp * bp;
                    beta += bq * bq;
                    gamma += bp * bq;
                }
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                if gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let bp = b[(i, p)];
                    let bq = b[(i, q)];
                    b[(i, p)] = c * bp - s * bq;
                    b[(i, q)] = s * bp + c * bq;
                }
                for i in 0..n {
                    let vp = v[(i, p)];
                    let vq = v[(i, q)];
                    v[(i, p)] = c * vp - s * vq;
                    v[(i, q)] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    // Column norms are the singular values; sort descending.
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n).map(|j| b.column(j).norm()).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());

    let mut sigma = Vec::with_capacity(n);
    let mut u = DMatrix::<f64>::zeros(m, n);
    let mut v_sorted = DMatrix::<f64>::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let s = norms[src];
        sigma.push(s);
        if s > 0.0 {
            for i in 0..m {
                u[(i, dst)] = b[(i, src)] / s;
            }
        }
        v_sorted.set_column(dst, &v.column(src));
    }
    JacobiSvd {
        u,
        sigma,
        v: v_sorted,
    }
}

/// Largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    jacobi_svd(a).sigma_max()
}

/// Minimum-norm least-squares solve through the Jacobi SVD with a relative
/// rank cutoff.
pub fn pinv_solve(
    a: &DMatrix<f64>,
    b: &nalgebra::DVector<f64>,
    rel_tol: f64,
) -> nalgebra::DVector<f64> {
    let svd = jacobi_svd(a);
    let cutoff = rel_tol * svd.sigma_max().max(f64::MIN_POSITIVE);
    let mut x = nalgebra::DVector::zeros(a.ncols());
    for (j, &s) in svd.sigma.iter().enumerate() {
        if s > cutoff {
            let coeff = svd.u.column(j).dot(b) / s;
            x += svd.v.column(j) * coeff;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;
    use nalgebra::DVector;

    fn recompose(svd: &JacobiSvd, m: usize, n: usize) -> DMatrix<f64> {
        let mut acc = DMatrix::<f64>::zeros(m, n);
        for (j, &s) in svd.sigma.iter().enumerate() {
            if s > 0.0 {
                acc += svd.u.column(j) * svd.v.column(j).transpose() * s;
            }
        }
        acc
    }

    #[test]
    #[allow(clippy::approx_constant)] // byte-exact copy of the offending input
    fn factors_the_projector_residual_that_breaks_golub_kahan() {
        let row_basis = DMatrix::from_column_slice(
            3,
            2,
            &[
                0.0,
                -0.7071067811865476,
                0.7071067811865475,
                0.9428090415820632,
                -0.2357022603955162,
                -0.23570226039551623,
            ],
        );
        let residual = DMatrix::<f64>::identity(3, 3) - &row_basis * row_basis.transpose();
        let svd = jacobi_svd(&residual);
        assert!((svd.sigma[0] - 1.0).abs() < 1e-12, "sigma {:?}", svd.sigma);
        assert!(svd.sigma[1] < 1e-12);
        let err = (recompose(&svd, 3, 3) - &residual).amax();
        assert!(err < 1e-14, "recompose error {err}");
    }

    #[test]
    fn random_matrices_recompose_and_orthogonality_holds() {
        let mut rng = CounterRng::from_seed(11);
        for &(m, n) in &[(1usize, 1usize), (3, 3), (5, 2), (2, 5), (8, 8), (12, 7)] {
            let a = DMatrix::from_fn(m, n, |_, _| 2.0 * rng.next_f64() - 1.0);
            let svd = jacobi_svd(&a);
            let err = (recompose(&svd, m, n) - &a).amax();
            assert!(err < 1e-12, "{m}x{n}: recompose error {err}");
            let vtv = svd.v.transpose() * &svd.v;
            assert!((vtv - DMatrix::<f64>::identity(n, n)).amax() < 1e-13);
            for w in svd.sigma.windows(2) {
                assert!(w[0] >= w[1]);
            }
        }
    }

    #[test]
    fn rank_deficient_kernel_is_in_v() {
        // 1x3: kernel must be the two trailing v columns.
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, -2.0]);
        let svd = jacobi_svd(&a);
        assert!(svd.sigma[0] > 2.9);
        assert!(svd.sigma[1] < 1e-15 && svd.sigma[2] < 1e-15);
        for j in 1..3 {
            assert!((&a * svd.v.column(j)).norm() < 1e-14);
        }
    }

    #[test]
    fn pinv_solve_matches_exact_solution() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_vec(vec![5.0, 10.0]);
        let x = pinv_solve(&a, &b, 1e-12);
        assert!((a * x - b).norm() < 1e-12);
    }

    #[test]
    fn pinv_solve_minimum_norm_on_singular_system() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let b = DVector::from_vec(vec![3.0, 0.0]);
        let x = pinv_solve(&a, &b, 1e-12);
        assert!((x - DVector::from_vec(vec![3.0, 0.0])).norm() < 1e-14);
    }
}
