//! Tolerance-aware subspace arithmetic: nullspaces, intersections,
//! invariant subspaces and orthogonal projectors.
//!
//! All subspaces are stored through an orthonormal basis so that equality,
//! containment and distance are basis-independent (they compare orthogonal
//! projectors in the operator norm). The zero-dimensional subspace is a
//! first-class value with an empty basis matrix.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Operator-norm distance below which two projectors describe the same
/// subspace.
pub const SUBSPACE_EQ_TOL: f64 = 1e-8;

/// Default relative rank cutoff for an `r x c` matrix.
pub fn default_rank_tol(rows: usize, cols: usize) -> f64 {
    1e-10 * rows.max(cols) as f64
}

/// Largest singular value, or 0 for an empty matrix.
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    crate::linalg::spectral_norm(m)
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::input(format!("{what} contains non-finite entries")));
    }
    Ok(())
}

/// A linear subspace of `R^ambient`, stored as an orthonormal basis.
#[derive(Debug, Clone)]
pub struct Subspace {
    ambient: usize,
    /// `ambient x dim` matrix with orthonormal columns (`dim` may be 0).
    basis: DMatrix<f64>,
}

impl Subspace {
    /// Wraps an already-orthonormal basis. Fails if `basis^T basis` differs
    /// from the identity by more than 1e-12 per entry.
    pub fn new(basis: DMatrix<f64>) -> Result<Self> {
        check_finite(&basis, "basis")?;
        let k = basis.ncols();
        let gram = basis.transpose() * &basis;
        let id = DMatrix::<f64>::identity(k, k);
        if (gram - id).amax() > 1e-12 && k > 0 {
            return Err(Error::input("basis columns are not orthonormal"));
        }
        Ok(Subspace {
            ambient: basis.nrows(),
            basis,
        })
    }

    /// Builds the span of arbitrary (possibly dependent) columns,
    /// orthonormalizing with an SVD rank cutoff.
    pub fn from_spanning(cols: &DMatrix<f64>) -> Result<Self> {
        check_finite(cols, "spanning set")?;
        Ok(Self::orthonormalize(cols, None))
    }

    fn orthonormalize(cols: &DMatrix<f64>, rel_tol: Option<f64>) -> Self {
        let n = cols.nrows();
        if cols.ncols() == 0 {
            return Self::zero(n);
        }
        let svd = crate::linalg::jacobi_svd(cols);
        let smax = svd.sigma_max();
        let cutoff = rel_tol.unwrap_or_else(|| default_rank_tol(n, cols.ncols()))
            * smax.max(f64::MIN_POSITIVE);
        let rank = svd
            .sigma
            .iter()
            .filter(|&&s| s > cutoff && smax > 0.0)
            .count();
        let basis = svd.u.view((0, 0), (n, rank)).into_owned();
        Subspace { ambient: n, basis }
    }

    /// The zero-dimensional subspace of `R^n`.
    pub fn zero(n: usize) -> Self {
        Subspace {
            ambient: n,
            basis: DMatrix::zeros(n, 0),
        }
    }

    /// The whole of `R^n`.
    pub fn full(n: usize) -> Self {
        Subspace {
            ambient: n,
            basis: DMatrix::identity(n, n),
        }
    }

    /// Span of a single (nonzero) vector.
    pub fn line(v: &DVector<f64>) -> Result<Self> {
        Self::from_spanning(&DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Orthogonal projector `basis * basis^T` onto the subspace.
    pub fn projector(&self) -> DMatrix<f64> {
        if self.dim() == 0 {
            DMatrix::zeros(self.ambient, self.ambient)
        } else {
            &self.basis * self.basis.transpose()
        }
    }

    /// Orthogonal complement: the kernel of `basis^T`.
    pub fn complement(&self) -> Self {
        if self.dim() == 0 {
            return Self::full(self.ambient);
        }
        if self.dim() == self.ambient {
            return Self::zero(self.ambient);
        }
        nullspace_with_tol(&self.basis.transpose(), 0.5).expect("orthonormal basis is finite")
    }

    /// Projection of `v` onto the subspace.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        if self.dim() == 0 {
            DVector::zeros(self.ambient)
        } else {
            &self.basis * (self.basis.transpose() * v)
        }
    }

    /// Whether `v` lies in the subspace up to `tol * (1 + |v|)`.
    pub fn contains_vec(&self, v: &DVector<f64>, tol: f64) -> bool {
        (v - self.project(v)).norm() <= tol * (1.0 + v.norm())
    }

    /// Whether every direction of `other` lies in `self`.
    pub fn contains_subspace(&self, other: &Subspace, tol: f64) -> bool {
        if other.dim() == 0 {
            return true;
        }
        let residual = other.basis() - self.projector() * other.basis();
        operator_norm(&residual) <= tol
    }

    /// Operator-norm distance between the two orthogonal projectors.
    pub fn distance(&self, other: &Subspace) -> Result<f64> {
        if self.ambient != other.ambient {
            return Err(Error::input(format!(
                "ambient dimension mismatch: {} vs {}",
                self.ambient, other.ambient
            )));
        }
        Ok(operator_norm(&(self.projector() - other.projector())))
    }

    /// Subspace equality at the default projector tolerance.
    pub fn approx_eq(&self, other: &Subspace) -> bool {
        self.approx_eq_tol(other, SUBSPACE_EQ_TOL)
    }

    pub fn approx_eq_tol(&self, other: &Subspace, tol: f64) -> bool {
        matches!(self.distance(other), Ok(d) if d < tol)
    }

    /// Intersection, computed as the nullspace of the stacked complementary
    /// projectors `[(I - P1); (I - P2)]`.
    pub fn intersect(&self, other: &Subspace) -> Result<Subspace> {
        if self.ambient != other.ambient {
            return Err(Error::input(format!(
                "ambient dimension mismatch: {} vs {}",
                self.ambient, other.ambient
            )));
        }
        let n = self.ambient;
        let id = DMatrix::<f64>::identity(n, n);
        let mut stacked = DMatrix::<f64>::zeros(2 * n, n);
        stacked
            .view_mut((0, 0), (n, n))
            .copy_from(&(&id - self.projector()));
        stacked
            .view_mut((n, 0), (n, n))
            .copy_from(&(&id - other.projector()));
        // The stacked matrix has operator norm <= 2 by construction, so an
        // absolute cutoff at the default relative tolerance is appropriate.
        nullspace_with_tol(&stacked, default_rank_tol(n, n))
    }

    /// Smallest subspace containing both arguments.
    pub fn sum(&self, other: &Subspace) -> Result<Subspace> {
        if self.ambient != other.ambient {
            return Err(Error::input("ambient dimension mismatch in sum"));
        }
        let mut cols = DMatrix::<f64>::zeros(self.ambient, self.dim() + other.dim());
        cols.view_mut((0, 0), (self.ambient, self.dim()))
            .copy_from(&self.basis);
        cols.view_mut((0, self.dim()), (self.ambient, other.dim()))
            .copy_from(other.basis());
        Subspace::from_spanning(&cols)
    }
}

/// An affine subspace `base_point + directions`, canonicalized so the base
/// point is the minimum-norm point (orthogonal to the direction space).
#[derive(Debug, Clone)]
pub struct AffineSubspace {
    base: DVector<f64>,
    directions: Subspace,
}

impl AffineSubspace {
    pub fn new(base: DVector<f64>, directions: Subspace) -> Result<Self> {
        if base.len() != directions.ambient_dim() {
            return Err(Error::input(
                "base point dimension does not match directions",
            ));
        }
        if base.iter().any(|x| !x.is_finite()) {
            return Err(Error::input("base point contains non-finite entries"));
        }
        let canonical = &base - directions.project(&base);
        Ok(AffineSubspace {
            base: canonical,
            directions,
        })
    }

    /// The affine subspace through `point` with the given directions.
    pub fn through(point: &DVector<f64>, directions: Subspace) -> Result<Self> {
        Self::new(point.clone(), directions)
    }

    pub fn base_point(&self) -> &DVector<f64> {
        &self.base
    }

    pub fn directions(&self) -> &Subspace {
        &self.directions
    }

    pub fn ambient_dim(&self) -> usize {
        self.base.len()
    }

    /// Orthogonal projection of a point onto the affine subspace.
    pub fn project_point(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.base + self.directions.project(&(z - &self.base))
    }

    pub fn distance_to(&self, z: &DVector<f64>) -> f64 {
        (z - self.project_point(z)).norm()
    }

    pub fn contains_point(&self, z: &DVector<f64>, tol: f64) -> bool {
        self.distance_to(z) <= tol * (1.0 + z.norm())
    }
}

/// Nullspace of `m` at the default relative rank tolerance.
pub fn nullspace(m: &DMatrix<f64>) -> Result<Subspace> {
    nullspace_with_tol(m, default_rank_tol(m.nrows(), m.ncols()))
}

/// Nullspace of `m`: span of directions mapped below `rel_tol * sigma_max`.
///
/// The Jacobi SVD always returns a complete right factor, so wide matrices
/// report their full kernel directly.
pub fn nullspace_with_tol(m: &DMatrix<f64>, rel_tol: f64) -> Result<Subspace> {
    check_finite(m, "matrix")?;
    let n = m.ncols();
    if n == 0 {
        return Err(Error::input("nullspace of a matrix with zero columns"));
    }
    if m.nrows() == 0 {
        return Ok(Subspace::full(n));
    }
    let svd = crate::linalg::jacobi_svd(m);
    let smax = svd.sigma_max();
    if smax == 0.0 {
        return Ok(Subspace::full(n));
    }
    let cutoff = rel_tol * smax;
    let rank = svd.sigma.iter().filter(|&&s| s > cutoff).count();
    let basis = svd.v.view((0, rank), (n, n - rank)).into_owned();
    Ok(Subspace { ambient: n, basis })
}

/// Largest subspace `Y` of `x` with `a * Y` contained in `Y`.
///
/// Fixpoint iteration `V_{k+1} = V_k ∩ preimage(V_k)`, each step solved as
/// the nullspace of `[(I - P_k) a; (I - P_k)]`. The dimension strictly
/// decreases until the fixpoint, so at most `ambient` rounds run.
pub fn maximal_invariant_subspace(a: &DMatrix<f64>, x: &Subspace) -> Result<Subspace> {
    Ok(maximal_invariant_subspace_traced(a, x)?.0)
}

/// Same as [`maximal_invariant_subspace`], also returning the dimension of
/// each iterate (starting with `x` itself).
pub fn maximal_invariant_subspace_traced(
    a: &DMatrix<f64>,
    x: &Subspace,
) -> Result<(Subspace, Vec<usize>)> {
    check_finite(a, "matrix")?;
    let n = x.ambient_dim();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::input(format!(
            "matrix is {}x{} but subspace ambient dimension is {n}",
            a.nrows(),
            a.ncols()
        )));
    }
    let mut current = x.clone();
    let mut dims = vec![current.dim()];
    let id = DMatrix::<f64>::identity(n, n);
    for _ in 0..=n {
        if current.dim() == 0 {
            break;
        }
        let residual_proj = &id - current.projector();
        let mut stacked = DMatrix::<f64>::zeros(2 * n, n);
        stacked
            .view_mut((0, 0), (n, n))
            .copy_from(&(&residual_proj * a));
        stacked.view_mut((n, 0), (n, n)).copy_from(&residual_proj);
        // Normalize the A block so one relative cutoff fits both blocks.
        let scale = operator_norm(a).max(1.0);
        let mut top = stacked.view_mut((0, 0), (n, n));
        top /= scale;
        let next = nullspace_with_tol(&stacked, default_rank_tol(2 * n, n))?;
        let stop = next.dim() == current.dim();
        current = next;
        dims.push(current.dim());
        if stop {
            break;
        }
    }
    Ok((current, dims))
}

/// Residual of the invariance property `a * Y ⊆ Y`: `‖(I − P_Y) a P_Y‖`.
pub fn invariance_residual(a: &DMatrix<f64>, y: &Subspace) -> f64 {
    let n = y.ambient_dim();
    let p = y.projector();
    let residual = (DMatrix::<f64>::identity(n, n) - &p) * a * &p;
    operator_norm(&residual)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    #[test]
    fn nullspace_rank_one_diagonal() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let ns = nullspace_with_tol(&m, 1e-10).unwrap();
        assert_eq!(ns.dim(), 1);
        assert!(ns.contains_vec(&vec2(0.0, 1.0), 1e-12));
    }

    #[test]
    fn nullspace_zero_matrix_is_full_space() {
        let m = DMatrix::<f64>::zeros(3, 3);
        let ns = nullspace(&m).unwrap();
        assert_eq!(ns.dim(), 3);
    }

    #[test]
    fn nullspace_of_ones_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let ns = nullspace(&m).unwrap();
        assert_eq!(ns.dim(), 1);
        let v = ns.basis().column(0).into_owned();
        // M v = 0 directly.
        assert!((m * &v).norm() < 1e-12);
        let expected = vec2(1.0, -1.0) / 2.0_f64.sqrt();
        assert!((v.clone() - &expected).norm().min((v + expected).norm()) < 1e-12);
    }

    #[test]
    fn nullspace_of_wide_matrix_gets_full_kernel() {
        // 1x3 matrix: kernel is 2-dimensional.
        let m = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, -1.0]);
        let ns = nullspace(&m).unwrap();
        assert_eq!(ns.dim(), 2);
        for j in 0..2 {
            let v = ns.basis().column(j).into_owned();
            assert!((&m * v).norm() < 1e-12);
        }
    }

    #[test]
    fn nullspace_rejects_non_finite() {
        let m = DMatrix::from_row_slice(1, 2, &[f64::NAN, 1.0]);
        assert!(matches!(nullspace(&m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn intersect_coordinate_planes() {
        let e = DMatrix::<f64>::identity(3, 3);
        let s12 =
            Subspace::from_spanning(&DMatrix::from_columns(&[e.column(0), e.column(1)])).unwrap();
        let s23 =
            Subspace::from_spanning(&DMatrix::from_columns(&[e.column(1), e.column(2)])).unwrap();
        let inter = s12.intersect(&s23).unwrap();
        assert_eq!(inter.dim(), 1);
        assert!(inter.contains_vec(&DVector::from_vec(vec![0.0, 1.0, 0.0]), 1e-10));
    }

    #[test]
    fn intersect_with_full_space_is_identity() {
        let s = Subspace::line(&DVector::from_vec(vec![1.0, 2.0, 2.0])).unwrap();
        let inter = s.intersect(&Subspace::full(3)).unwrap();
        assert!(inter.approx_eq(&s));
    }

    #[test]
    fn intersect_transversal_lines_is_zero() {
        let s1 = Subspace::line(&vec2(1.0, 1.0)).unwrap();
        let s2 = Subspace::line(&vec2(1.0, -1.0)).unwrap();
        assert_eq!(s1.intersect(&s2).unwrap().dim(), 0);
    }

    #[test]
    fn intersect_dimension_mismatch_is_error() {
        let s1 = Subspace::full(2);
        let s2 = Subspace::full(3);
        assert!(s1.intersect(&s2).is_err());
    }

    #[test]
    fn invariant_subspace_rotation_line_collapses() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let x = Subspace::line(&vec2(1.0, 0.0)).unwrap();
        let y = maximal_invariant_subspace(&a, &x).unwrap();
        assert_eq!(y.dim(), 0);
    }

    #[test]
    fn invariant_subspace_full_space_is_fixed() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let y = maximal_invariant_subspace(&a, &Subspace::full(2)).unwrap();
        assert_eq!(y.dim(), 2);
    }

    #[test]
    fn invariant_subspace_rotation_plane_is_kept() {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let e = DMatrix::<f64>::identity(3, 3);
        let x =
            Subspace::from_spanning(&DMatrix::from_columns(&[e.column(0), e.column(1)])).unwrap();
        let y = maximal_invariant_subspace(&a, &x).unwrap();
        assert_eq!(y.dim(), 2);
        assert!(y.approx_eq(&x));
        assert!(invariance_residual(&a, &y) < 1e-10);
    }

    #[test]
    fn invariant_subspace_iteration_dims_decrease() {
        // X = span{e1, e2} with A shifting e1 -> e2 -> e3: two rounds needed.
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let e = DMatrix::<f64>::identity(3, 3);
        let x =
            Subspace::from_spanning(&DMatrix::from_columns(&[e.column(0), e.column(1)])).unwrap();
        let (y, dims) = maximal_invariant_subspace_traced(&a, &x).unwrap();
        assert_eq!(y.dim(), 0);
        assert!(dims.len() <= 4);
        for w in dims.windows(2) {
            assert!(w[1] <= w[0]);
        }
        // Strictly decreasing until termination.
        for w in dims[..dims.len() - 1].windows(2) {
            assert!(w[1] < w[0] || w[0] == 0);
        }
    }

    #[test]
    fn projector_of_line_in_r2() {
        let s = Subspace::line(&vec2(1.0, 0.0)).unwrap();
        let p = s.projector();
        assert!((p - DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).amax() < 1e-14);
    }

    #[test]
    fn projector_of_full_space_is_identity() {
        let p = Subspace::full(3).projector();
        assert!((p - DMatrix::<f64>::identity(3, 3)).amax() < 1e-14);
    }

    #[test]
    fn projector_of_diagonal_line() {
        let s = Subspace::line(&vec2(1.0, 1.0)).unwrap();
        let p = s.projector();
        let expected = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        assert!((p - expected).amax() < 1e-14);
    }

    #[test]
    fn affine_subspace_canonicalizes_base_point() {
        let dirs = Subspace::line(&vec2(1.0, 0.0)).unwrap();
        let a = AffineSubspace::new(vec2(3.0, 2.0), dirs).unwrap();
        // Minimum-norm representative drops the component along the line.
        assert!((a.base_point() - vec2(0.0, 2.0)).norm() < 1e-14);
        assert!(a.contains_point(&vec2(7.0, 2.0), 1e-12));
        assert!(!a.contains_point(&vec2(0.0, 1.0), 1e-6));
    }

    #[test]
    fn zero_subspace_is_usable() {
        let z = Subspace::zero(4);
        assert_eq!(z.dim(), 0);
        assert_eq!(z.projector(), DMatrix::zeros(4, 4));
        assert_eq!(z.complement().dim(), 4);
        assert!(z.project(&DVector::from_element(4, 1.0)).norm() == 0.0);
    }
}
