//! Problem representations for concave-convex functions φ on R^{n+m}.
//!
//! Three concrete forms sit behind the [`SaddleProblem`] trait: quadratics
//! and polynomials carry exact Hessians, while [`GenericSaddle`] trusts
//! caller-supplied callbacks (optionally validated against finite
//! differences on construction). The trait also derives the primal-dual
//! flow field and the skew/symmetric split of the flow Jacobian used by
//! the limit analysis.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rng::CounterRng;

pub mod poly;
pub mod schema;

pub use poly::{parse_polynomial, Polynomial};

/// Tolerance for declaring a quadratic block sign-definite the wrong way.
const QUADRATIC_SIGN_TOL: f64 = 1e-10;
/// Tolerance for sampled concavity checks on non-quadratic forms.
const PROBE_SIGN_TOL: f64 = 1e-8;

fn check_state(z: &DVector<f64>, dim: usize) -> Result<()> {
    if z.len() != dim {
        return Err(Error::input(format!(
            "state has length {} but the problem dimension is {dim}",
            z.len()
        )));
    }
    if z.iter().any(|x| !x.is_finite()) {
        return Err(Error::input("state contains non-finite entries"));
    }
    Ok(())
}

fn symmetric_eig_bounds(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (0.0, 0.0);
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let min = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let max = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// A concave-convex function with gradient and Hessian access.
///
/// The convention throughout: the state is `z = (x, y)` with `x` the first
/// `primal_dim()` components (the concave variables) and `y` the remaining
/// `dual_dim()` ones (the convex variables).
pub trait SaddleProblem: Send + Sync {
    fn primal_dim(&self) -> usize;
    fn dual_dim(&self) -> usize;

    fn dim(&self) -> usize {
        self.primal_dim() + self.dual_dim()
    }

    /// φ(z).
    fn value(&self, z: &DVector<f64>) -> Result<f64>;

    /// Full gradient (φ_x, φ_y).
    fn gradient(&self, z: &DVector<f64>) -> Result<DVector<f64>>;

    /// Full (n+m) x (n+m) Hessian of φ.
    fn hessian(&self, z: &DVector<f64>) -> Result<DMatrix<f64>>;

    /// Exact quadratic representation, when the problem has one.
    fn as_quadratic(&self) -> Option<QuadraticSaddle> {
        None
    }

    /// The primal-dual flow field `(φ_x, -φ_y)`; vanishes exactly at
    /// saddle points.
    fn flow_field(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        check_state(z, self.dim())?;
        let mut g = self.gradient(z)?;
        if g.len() != self.dim() {
            return Err(Error::eval("gradient callback returned wrong dimension"));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::eval("gradient callback returned non-finite values"));
        }
        for i in self.primal_dim()..self.dim() {
            g[i] = -g[i];
        }
        Ok(g)
    }

    /// Skew-symmetric coupling block of the flow Jacobian:
    /// `[[0, φ_xy], [-φ_yx, 0]]`.
    fn coupling(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (n, m) = (self.primal_dim(), self.dual_dim());
        let h = self.checked_hessian(z)?;
        let mut a = DMatrix::<f64>::zeros(n + m, n + m);
        let hxy = h.view((0, n), (n, m));
        a.view_mut((0, n), (n, m)).copy_from(&hxy);
        a.view_mut((n, 0), (m, n)).copy_from(&(-hxy.transpose()));
        Ok(a)
    }

    /// Symmetric curvature block of the flow Jacobian:
    /// `[[φ_xx, 0], [0, -φ_yy]]`; negative semidefinite by concavity-convexity.
    fn curvature(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (n, m) = (self.primal_dim(), self.dual_dim());
        let h = self.checked_hessian(z)?;
        let mut b = DMatrix::<f64>::zeros(n + m, n + m);
        b.view_mut((0, 0), (n, n))
            .copy_from(&h.view((0, 0), (n, n)));
        b.view_mut((n, n), (m, m))
            .copy_from(&(-h.view((n, n), (m, m))));
        Ok(b)
    }

    /// `B'(z) = B(z) + (A(z) - A(z_ref))`. Its kernel is the intersection
    /// of `ker B(z)` and `ker(A(z) - A(z_ref))` by the skew/symmetric split.
    fn curvature_shifted(&self, z: &DVector<f64>, z_ref: &DVector<f64>) -> Result<DMatrix<f64>> {
        let b = self.curvature(z)?;
        let a = self.coupling(z)?;
        let a_ref = self.coupling(z_ref)?;
        Ok(b + a - a_ref)
    }

    /// Symmetrized full Hessian with output validation.
    fn checked_hessian(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_state(z, self.dim())?;
        let h = self.hessian(z)?;
        let d = self.dim();
        if h.nrows() != d || h.ncols() != d {
            return Err(Error::eval("hessian callback returned wrong shape"));
        }
        if h.iter().any(|x| !x.is_finite()) {
            return Err(Error::eval("hessian callback returned non-finite values"));
        }
        Ok((&h + h.transpose()) * 0.5)
    }

    /// Stable 64-bit digest of the problem, computed from probe
    /// evaluations; used to stamp trajectories with their source.
    fn fingerprint(&self) -> u64 {
        let mut rng = CounterRng::from_seed(0x5add_1ef1);
        let mut acc: u64 = 0xcbf2_9ce4_8422_2325;
        let mut fold = |x: f64| {
            acc ^= x.to_bits();
            acc = acc.wrapping_mul(0x0000_0100_0000_01b3);
        };
        fold(self.primal_dim() as f64);
        fold(self.dual_dim() as f64);
        for _ in 0..8 {
            let z = DVector::from_fn(self.dim(), |_, _| 2.0 * rng.next_f64() - 1.0);
            match self.value(&z) {
                Ok(v) => fold(v),
                Err(_) => fold(f64::NAN),
            }
            if let Ok(g) = self.gradient(&z) {
                g.iter().for_each(|&x| fold(x));
            }
        }
        acc
    }
}

macro_rules! delegate_saddle_problem {
    ($ty:ty) => {
        impl<P: SaddleProblem + ?Sized> SaddleProblem for $ty {
            fn primal_dim(&self) -> usize {
                (**self).primal_dim()
            }
            fn dual_dim(&self) -> usize {
                (**self).dual_dim()
            }
            fn value(&self, z: &DVector<f64>) -> Result<f64> {
                (**self).value(z)
            }
            fn gradient(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
                (**self).gradient(z)
            }
            fn hessian(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
                (**self).hessian(z)
            }
            fn as_quadratic(&self) -> Option<QuadraticSaddle> {
                (**self).as_quadratic()
            }
        }
    };
}

delegate_saddle_problem!(&P);
delegate_saddle_problem!(Box<P>);
delegate_saddle_problem!(Arc<P>);

// ---------------------------------------------------------------------------
// Quadratic form
// ---------------------------------------------------------------------------

/// φ(x,y) = c + p·x + q·y + ½ x·Pxx x + x·Pxy y + ½ y·Pyy y
/// with `Pxx ⪯ 0` (concavity) and `Pyy ⪰ 0` (convexity).
#[derive(Debug, Clone)]
pub struct QuadraticSaddle {
    n: usize,
    m: usize,
    pxx: DMatrix<f64>,
    pxy: DMatrix<f64>,
    pyy: DMatrix<f64>,
    p: DVector<f64>,
    q: DVector<f64>,
    c: f64,
}

impl QuadraticSaddle {
    pub fn new(
        pxx: DMatrix<f64>,
        pxy: DMatrix<f64>,
        pyy: DMatrix<f64>,
        p: DVector<f64>,
        q: DVector<f64>,
        c: f64,
    ) -> Result<Self> {
        let n = pxx.nrows();
        let m = pyy.nrows();
        if n == 0 || m == 0 {
            return Err(Error::input("quadratic problem needs n >= 1 and m >= 1"));
        }
        if pxx.ncols() != n || pyy.ncols() != m {
            return Err(Error::input("Pxx and Pyy must be square"));
        }
        if pxy.nrows() != n || pxy.ncols() != m {
            return Err(Error::input(format!(
                "Pxy must be {n}x{m}, got {}x{}",
                pxy.nrows(),
                pxy.ncols()
            )));
        }
        if p.len() != n || q.len() != m {
            return Err(Error::input("linear terms have wrong length"));
        }
        for (name, mat) in [("Pxx", &pxx), ("Pxy", &pxy), ("Pyy", &pyy)] {
            if mat.iter().any(|x| !x.is_finite()) {
                return Err(Error::input(format!("{name} contains non-finite entries")));
            }
        }
        if !c.is_finite() || p.iter().chain(q.iter()).any(|x| !x.is_finite()) {
            return Err(Error::input(
                "linear/constant terms contain non-finite entries",
            ));
        }
        if (&pxx - pxx.transpose()).amax() > 1e-12 {
            return Err(Error::input("Pxx is not symmetric"));
        }
        if (&pyy - pyy.transpose()).amax() > 1e-12 {
            return Err(Error::input("Pyy is not symmetric"));
        }
        let (_, max_xx) = symmetric_eig_bounds(&pxx);
        if max_xx > QUADRATIC_SIGN_TOL {
            return Err(Error::input(format!(
                "Pxx must be negative semidefinite (max eigenvalue {max_xx:.3e})"
            )));
        }
        let (min_yy, _) = symmetric_eig_bounds(&pyy);
        if min_yy < -QUADRATIC_SIGN_TOL {
            return Err(Error::input(format!(
                "Pyy must be positive semidefinite (min eigenvalue {min_yy:.3e})"
            )));
        }
        Ok(QuadraticSaddle {
            n,
            m,
            pxx: (&pxx + pxx.transpose()) * 0.5,
            pxy,
            pyy: (&pyy + pyy.transpose()) * 0.5,
            p,
            q,
            c,
        })
    }

    /// φ = x·y in one primal and one dual variable.
    pub fn bilinear_2d() -> Self {
        QuadraticSaddle::new(
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
            DVector::zeros(1),
            DVector::zeros(1),
            0.0,
        )
        .expect("bilinear problem is valid")
    }

    /// φ = -½x² + ½y², the strictly concave-convex 2-d reference problem.
    pub fn strict_2d() -> Self {
        QuadraticSaddle::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            DVector::zeros(1),
            DVector::zeros(1),
            0.0,
        )
        .expect("strict problem is valid")
    }

    pub fn pxx(&self) -> &DMatrix<f64> {
        &self.pxx
    }
    pub fn pxy(&self) -> &DMatrix<f64> {
        &self.pxy
    }
    pub fn pyy(&self) -> &DMatrix<f64> {
        &self.pyy
    }
    pub fn linear_x(&self) -> &DVector<f64> {
        &self.p
    }
    pub fn linear_y(&self) -> &DVector<f64> {
        &self.q
    }

    /// The constant full Hessian of φ.
    pub fn full_hessian(&self) -> DMatrix<f64> {
        let (n, m) = (self.n, self.m);
        let mut h = DMatrix::<f64>::zeros(n + m, n + m);
        h.view_mut((0, 0), (n, n)).copy_from(&self.pxx);
        h.view_mut((0, n), (n, m)).copy_from(&self.pxy);
        h.view_mut((n, 0), (m, n)).copy_from(&self.pxy.transpose());
        h.view_mut((n, n), (m, m)).copy_from(&self.pyy);
        h
    }

    /// Exact gains transform: φ'(z') = φ(Λ z') stays quadratic.
    pub fn apply_gains(&self, gains: &GainVector) -> Result<QuadraticSaddle> {
        if gains.primal_dim() != self.n || gains.dual_dim() != self.m {
            return Err(Error::input("gain vector dimensions do not match problem"));
        }
        let lx = DMatrix::from_diagonal(&gains.gamma_x().map(f64::sqrt));
        let ly = DMatrix::from_diagonal(&gains.gamma_y().map(f64::sqrt));
        QuadraticSaddle::new(
            &lx * &self.pxx * &lx,
            &lx * &self.pxy * &ly,
            &ly * &self.pyy * &ly,
            &lx * &self.p,
            &ly * &self.q,
            self.c,
        )
    }
}

impl SaddleProblem for QuadraticSaddle {
    fn primal_dim(&self) -> usize {
        self.n
    }

    fn dual_dim(&self) -> usize {
        self.m
    }

    fn value(&self, z: &DVector<f64>) -> Result<f64> {
        check_state(z, self.dim())?;
        let x = z.rows(0, self.n);
        let y = z.rows(self.n, self.m);
        let quad = 0.5 * (x.transpose() * &self.pxx * x)[(0, 0)]
            + (x.transpose() * &self.pxy * y)[(0, 0)]
            + 0.5 * (y.transpose() * &self.pyy * y)[(0, 0)];
        Ok(self.c + self.p.dot(&x.into_owned()) + self.q.dot(&y.into_owned()) + quad)
    }

    fn gradient(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        check_state(z, self.dim())?;
        let x = z.rows(0, self.n).into_owned();
        let y = z.rows(self.n, self.m).into_owned();
        let gx = &self.p + &self.pxx * &x + &self.pxy * &y;
        let gy = &self.q + self.pxy.transpose() * &x + &self.pyy * &y;
        let mut g = DVector::zeros(self.dim());
        g.rows_mut(0, self.n).copy_from(&gx);
        g.rows_mut(self.n, self.m).copy_from(&gy);
        Ok(g)
    }

    fn hessian(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_state(z, self.dim())?;
        Ok(self.full_hessian())
    }

    fn as_quadratic(&self) -> Option<QuadraticSaddle> {
        Some(self.clone())
    }
}

// ---------------------------------------------------------------------------
// Polynomial form
// ---------------------------------------------------------------------------

/// φ given by a polynomial in (x, y) with exact derivatives; the backing
/// store for the `generic-expression` problem-file form.
#[derive(Debug, Clone)]
pub struct PolynomialSaddle {
    n: usize,
    m: usize,
    poly: Polynomial,
}

impl PolynomialSaddle {
    /// Validates sampled concavity-convexity before accepting the problem.
    pub fn new(n: usize, m: usize, poly: Polynomial) -> Result<Self> {
        let p = Self::new_unchecked(n, m, poly)?;
        validate_concavity_probes(&p, &ProbeOptions::default())?;
        Ok(p)
    }

    pub fn new_unchecked(n: usize, m: usize, poly: Polynomial) -> Result<Self> {
        if poly.nvars() != n + m {
            return Err(Error::input(format!(
                "polynomial has {} variables, expected n + m = {}",
                poly.nvars(),
                n + m
            )));
        }
        if n == 0 || m == 0 {
            return Err(Error::input("polynomial problem needs n >= 1 and m >= 1"));
        }
        Ok(PolynomialSaddle { n, m, poly })
    }

    /// The quartic counterexample φ = -x⁴/4 + x·y.
    pub fn quartic_example() -> Self {
        let vars = vec!["x".to_string(), "y".to_string()];
        let poly = parse_polynomial("-0.25*x^4 + x*y", &vars).expect("static expression parses");
        PolynomialSaddle::new_unchecked(1, 1, poly).expect("valid dims")
    }

    pub fn polynomial(&self) -> &Polynomial {
        &self.poly
    }

    pub fn apply_gains(&self, gains: &GainVector) -> Result<PolynomialSaddle> {
        if gains.primal_dim() != self.n || gains.dual_dim() != self.m {
            return Err(Error::input("gain vector dimensions do not match problem"));
        }
        let lambda: Vec<f64> = gains.lambda().iter().cloned().collect();
        PolynomialSaddle::new_unchecked(self.n, self.m, self.poly.scale_vars(&lambda))
    }
}

impl SaddleProblem for PolynomialSaddle {
    fn primal_dim(&self) -> usize {
        self.n
    }

    fn dual_dim(&self) -> usize {
        self.m
    }

    fn value(&self, z: &DVector<f64>) -> Result<f64> {
        check_state(z, self.dim())?;
        Ok(self.poly.eval(z.as_slice()))
    }

    fn gradient(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        check_state(z, self.dim())?;
        Ok(self.poly.gradient(z.as_slice()))
    }

    fn hessian(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_state(z, self.dim())?;
        Ok(self.poly.hessian(z.as_slice()))
    }

    fn as_quadratic(&self) -> Option<QuadraticSaddle> {
        if self.poly.degree() > 2 {
            return None;
        }
        let zero = vec![0.0; self.dim()];
        let h = self.poly.hessian(&zero);
        let g = self.poly.gradient(&zero);
        QuadraticSaddle::new(
            h.view((0, 0), (self.n, self.n)).into_owned(),
            h.view((0, self.n), (self.n, self.m)).into_owned(),
            h.view((self.n, self.n), (self.m, self.m)).into_owned(),
            g.rows(0, self.n).into_owned(),
            g.rows(self.n, self.m).into_owned(),
            self.poly.eval(&zero),
        )
        .ok()
    }
}

// ---------------------------------------------------------------------------
// Generic callback form
// ---------------------------------------------------------------------------

pub type ValueFn = dyn Fn(&DVector<f64>) -> f64 + Send + Sync;
pub type GradientFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
pub type HessianFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// φ defined by caller-supplied callbacks. Concavity is declared by the
/// constructor contract; [`GenericSaddle::validated`] additionally probes
/// the callbacks for internal consistency.
pub struct GenericSaddle {
    n: usize,
    m: usize,
    value: Box<ValueFn>,
    gradient: Box<GradientFn>,
    hessian: Box<HessianFn>,
}

impl GenericSaddle {
    pub fn new(
        n: usize,
        m: usize,
        value: Box<ValueFn>,
        gradient: Box<GradientFn>,
        hessian: Box<HessianFn>,
    ) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::input("generic problem needs n >= 1 and m >= 1"));
        }
        Ok(GenericSaddle {
            n,
            m,
            value,
            gradient,
            hessian,
        })
    }

    /// Builds the problem and verifies on sampled probe points that the
    /// Hessian matches finite differences of the gradient (1e-5 relative),
    /// the gradient matches finite differences of the value, and the
    /// declared concavity-convexity holds.
    pub fn validated(
        n: usize,
        m: usize,
        value: Box<ValueFn>,
        gradient: Box<GradientFn>,
        hessian: Box<HessianFn>,
        opts: &ProbeOptions,
    ) -> Result<Self> {
        let p = Self::new(n, m, value, gradient, hessian)?;
        let mut rng = CounterRng::from_seed(opts.seed);
        for _ in 0..opts.probes {
            let z = DVector::from_fn(p.dim(), |_, _| {
                opts.half_width * (2.0 * rng.next_f64() - 1.0)
            });
            let g = p.gradient(&z)?;
            let g_fd = finite_diff_gradient(&|w| p.value(w), &z)?;
            let g_scale = g.norm().max(1.0);
            if (&g - &g_fd).norm() > 1e-5 * g_scale {
                return Err(Error::input(format!(
                    "gradient callback disagrees with finite differences of the value at {z:?}"
                )));
            }
            let h = p.hessian(&z)?;
            let h_fd = finite_diff_jacobian(&|w| p.gradient(w), &z)?;
            let h_scale = h.amax().max(1.0);
            if (&h - &h_fd).amax() > 1e-5 * h_scale {
                return Err(Error::input(format!(
                    "hessian callback disagrees with finite differences of the gradient at {z:?}"
                )));
            }
        }
        validate_concavity_probes(&p, opts)?;
        Ok(p)
    }
}

impl SaddleProblem for GenericSaddle {
    fn primal_dim(&self) -> usize {
        self.n
    }

    fn dual_dim(&self) -> usize {
        self.m
    }

    fn value(&self, z: &DVector<f64>) -> Result<f64> {
        check_state(z, self.dim())?;
        let v = (self.value)(z);
        if !v.is_finite() {
            return Err(Error::eval("value callback returned a non-finite number"));
        }
        Ok(v)
    }

    fn gradient(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        check_state(z, self.dim())?;
        Ok((self.gradient)(z))
    }

    fn hessian(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_state(z, self.dim())?;
        Ok((self.hessian)(z))
    }
}

// ---------------------------------------------------------------------------
// Linear-constraint Lagrangian
// ---------------------------------------------------------------------------

/// Concave utility for a Lagrangian, either an exact polynomial table or
/// opaque callbacks.
pub enum Utility {
    Polynomial(Polynomial),
    Callback {
        value: Box<ValueFn>,
        gradient: Box<GradientFn>,
        hessian: Box<HessianFn>,
    },
}

impl Utility {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match self {
            Utility::Polynomial(p) => p.eval(x.as_slice()),
            Utility::Callback { value, .. } => value(x),
        }
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Utility::Polynomial(p) => p.gradient(x.as_slice()),
            Utility::Callback { gradient, .. } => gradient(x),
        }
    }

    pub fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match self {
            Utility::Polynomial(p) => p.hessian(x.as_slice()),
            Utility::Callback { hessian, .. } => hessian(x),
        }
    }

    pub fn as_polynomial(&self) -> Option<&Polynomial> {
        match self {
            Utility::Polynomial(p) => Some(p),
            Utility::Callback { .. } => None,
        }
    }
}

/// φ(x,y) = U(x) + y·(Dx + e): the Lagrangian of a concave maximization
/// with relaxed linear equality constraints.
pub struct LinearConstraintLagrangian {
    n: usize,
    m: usize,
    utility: Utility,
    d: DMatrix<f64>,
    e: DVector<f64>,
}

impl LinearConstraintLagrangian {
    pub fn new(utility: Utility, d: DMatrix<f64>, e: DVector<f64>) -> Result<Self> {
        let m = d.nrows();
        let n = d.ncols();
        if n == 0 || m == 0 {
            return Err(Error::input("lagrangian needs n >= 1 and m >= 1"));
        }
        if e.len() != m {
            return Err(Error::input(format!(
                "constraint offset has length {}, expected {m}",
                e.len()
            )));
        }
        if d.iter().any(|x| !x.is_finite()) || e.iter().any(|x| !x.is_finite()) {
            return Err(Error::input("constraint data contains non-finite entries"));
        }
        if let Utility::Polynomial(p) = &utility {
            if p.nvars() != n {
                return Err(Error::input(format!(
                    "utility polynomial has {} variables, expected {n}",
                    p.nvars()
                )));
            }
        }
        let lag = LinearConstraintLagrangian {
            n,
            m,
            utility,
            d,
            e,
        };
        // Sampled concavity of U (exact for quadratic tables).
        let mut rng = CounterRng::from_seed(0x1a9a);
        for _ in 0..ProbeOptions::default().probes {
            let x = DVector::from_fn(lag.n, |_, _| 2.0 * rng.next_f64() - 1.0);
            let (_, max) = symmetric_eig_bounds(&lag.utility.hessian(&x));
            if max > PROBE_SIGN_TOL {
                return Err(Error::input(format!(
                    "utility is not concave: Hessian eigenvalue {max:.3e} > 0 at probe point"
                )));
            }
        }
        Ok(lag)
    }

    pub fn utility(&self) -> &Utility {
        &self.utility
    }

    pub fn constraint_matrix(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn constraint_offset(&self) -> &DVector<f64> {
        &self.e
    }
}

impl SaddleProblem for LinearConstraintLagrangian {
    fn primal_dim(&self) -> usize {
        self.n
    }

    fn dual_dim(&self) -> usize {
        self.m
    }

    fn value(&self, z: &DVector<f64>) -> Result<f64> {
        check_state(z, self.dim())?;
        let x = z.rows(0, self.n).into_owned();
        let y = z.rows(self.n, self.m).into_owned();
        let residual = &self.d * &x + &self.e;
        let v = self.utility.value(&x) + y.dot(&residual);
        if !v.is_finite() {
            return Err(Error::eval("utility returned a non-finite value"));
        }
        Ok(v)
    }

    fn gradient(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        check_state(z, self.dim())?;
        let x = z.rows(0, self.n).into_owned();
        let y = z.rows(self.n, self.m).into_owned();
        let gx = self.utility.gradient(&x) + self.d.transpose() * &y;
        let gy = &self.d * &x + &self.e;
        let mut g = DVector::zeros(self.dim());
        g.rows_mut(0, self.n).copy_from(&gx);
        g.rows_mut(self.n, self.m).copy_from(&gy);
        Ok(g)
    }

    fn hessian(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_state(z, self.dim())?;
        let x = z.rows(0, self.n).into_owned();
        let uxx = self.utility.hessian(&x);
        let mut h = DMatrix::<f64>::zeros(self.dim(), self.dim());
        h.view_mut((0, 0), (self.n, self.n)).copy_from(&uxx);
        h.view_mut((0, self.n), (self.n, self.m))
            .copy_from(&self.d.transpose());
        h.view_mut((self.n, 0), (self.m, self.n)).copy_from(&self.d);
        Ok(h)
    }

    fn as_quadratic(&self) -> Option<QuadraticSaddle> {
        let p = self.utility.as_polynomial()?;
        if p.degree() > 2 {
            return None;
        }
        let zero = vec![0.0; self.n];
        QuadraticSaddle::new(
            p.hessian(&zero),
            self.d.transpose(),
            DMatrix::zeros(self.m, self.m),
            p.gradient(&zero),
            self.e.clone(),
            p.eval(&zero),
        )
        .ok()
    }
}

// ---------------------------------------------------------------------------
// Gains
// ---------------------------------------------------------------------------

/// Strictly positive per-coordinate gains for the weighted flow
/// `dx_i/dt = γ^x_i φ_{x_i}`, `dy_j/dt = -γ^y_j φ_{y_j}`.
#[derive(Debug, Clone)]
pub struct GainVector {
    gamma_x: DVector<f64>,
    gamma_y: DVector<f64>,
}

impl GainVector {
    pub fn new(gamma_x: DVector<f64>, gamma_y: DVector<f64>) -> Result<Self> {
        if gamma_x
            .iter()
            .chain(gamma_y.iter())
            .any(|&g| !g.is_finite() || g <= 0.0)
        {
            return Err(Error::input("gains must be strictly positive and finite"));
        }
        Ok(GainVector { gamma_x, gamma_y })
    }

    pub fn ones(n: usize, m: usize) -> Self {
        GainVector {
            gamma_x: DVector::from_element(n, 1.0),
            gamma_y: DVector::from_element(m, 1.0),
        }
    }

    pub fn primal_dim(&self) -> usize {
        self.gamma_x.len()
    }

    pub fn dual_dim(&self) -> usize {
        self.gamma_y.len()
    }

    pub fn gamma_x(&self) -> &DVector<f64> {
        &self.gamma_x
    }

    pub fn gamma_y(&self) -> &DVector<f64> {
        &self.gamma_y
    }

    /// All gains as one vector in state order.
    pub fn concatenated(&self) -> DVector<f64> {
        let mut g = DVector::zeros(self.primal_dim() + self.dual_dim());
        g.rows_mut(0, self.primal_dim()).copy_from(&self.gamma_x);
        g.rows_mut(self.primal_dim(), self.dual_dim())
            .copy_from(&self.gamma_y);
        g
    }

    /// Λ = diag(sqrt γ), as a vector of diagonal entries.
    pub fn lambda(&self) -> DVector<f64> {
        self.concatenated().map(f64::sqrt)
    }

    pub fn inverse(&self) -> GainVector {
        GainVector {
            gamma_x: self.gamma_x.map(|g| 1.0 / g),
            gamma_y: self.gamma_y.map(|g| 1.0 / g),
        }
    }
}

/// φ'(z') = φ(Λ z'): the coordinate change that reduces the gains-weighted
/// flow to the plain one. Solutions map by `z(t) = Λ z'(t)`.
pub struct GainTransformed<P> {
    inner: P,
    lambda: DVector<f64>,
    n: usize,
    m: usize,
}

impl<P: SaddleProblem> GainTransformed<P> {
    pub fn new(inner: P, gains: &GainVector) -> Result<Self> {
        if gains.primal_dim() != inner.primal_dim() || gains.dual_dim() != inner.dual_dim() {
            return Err(Error::input("gain vector dimensions do not match problem"));
        }
        let n = inner.primal_dim();
        let m = inner.dual_dim();
        Ok(GainTransformed {
            lambda: gains.lambda(),
            inner,
            n,
            m,
        })
    }

    fn scale_state(&self, z: &DVector<f64>) -> DVector<f64> {
        z.component_mul(&self.lambda)
    }
}

impl<P: SaddleProblem> SaddleProblem for GainTransformed<P> {
    fn primal_dim(&self) -> usize {
        self.n
    }

    fn dual_dim(&self) -> usize {
        self.m
    }

    fn value(&self, z: &DVector<f64>) -> Result<f64> {
        check_state(z, self.dim())?;
        self.inner.value(&self.scale_state(z))
    }

    fn gradient(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        check_state(z, self.dim())?;
        Ok(self
            .inner
            .gradient(&self.scale_state(z))?
            .component_mul(&self.lambda))
    }

    fn hessian(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_state(z, self.dim())?;
        let h = self.inner.hessian(&self.scale_state(z))?;
        let l = DMatrix::from_diagonal(&self.lambda);
        Ok(&l * h * &l)
    }

    fn as_quadratic(&self) -> Option<QuadraticSaddle> {
        let q = self.inner.as_quadratic()?;
        let gains = GainVector::new(
            self.lambda.rows(0, self.n).map(|l| l * l),
            self.lambda.rows(self.n, self.m).map(|l| l * l),
        )
        .ok()?;
        q.apply_gains(&gains).ok()
    }
}

// ---------------------------------------------------------------------------
// Validation helpers
// ---------------------------------------------------------------------------

/// Sampling box for probabilistic validation of non-quadratic forms.
#[derive(Debug, Clone)]
pub struct ProbeOptions {
    pub probes: usize,
    pub half_width: f64,
    pub seed: u64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            probes: 64,
            half_width: 1.0,
            seed: 0xbeef,
        }
    }
}

fn validate_concavity_probes(p: &dyn SaddleProblem, opts: &ProbeOptions) -> Result<()> {
    let (n, m) = (p.primal_dim(), p.dual_dim());
    let mut rng = CounterRng::from_seed(opts.seed ^ 0xc0ffee);
    for _ in 0..opts.probes {
        let z = DVector::from_fn(n + m, |_, _| opts.half_width * (2.0 * rng.next_f64() - 1.0));
        let h = p.checked_hessian(&z)?;
        let (_, max_xx) = symmetric_eig_bounds(&h.view((0, 0), (n, n)).into_owned());
        if max_xx > PROBE_SIGN_TOL {
            return Err(Error::input(format!(
                "not concave in x: eigenvalue {max_xx:.3e} > 0 at probe point"
            )));
        }
        let (min_yy, _) = symmetric_eig_bounds(&h.view((n, n), (m, m)).into_owned());
        if min_yy < -PROBE_SIGN_TOL {
            return Err(Error::input(format!(
                "not convex in y: eigenvalue {min_yy:.3e} < 0 at probe point"
            )));
        }
    }
    Ok(())
}

/// Central finite-difference gradient of a scalar function.
pub fn finite_diff_gradient(
    f: &dyn Fn(&DVector<f64>) -> Result<f64>,
    z: &DVector<f64>,
) -> Result<DVector<f64>> {
    let mut g = DVector::zeros(z.len());
    for i in 0..z.len() {
        let h = 1e-5 * (1.0 + z[i].abs());
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[i] += h;
        zm[i] -= h;
        g[i] = (f(&zp)? - f(&zm)?) / (2.0 * h);
    }
    Ok(g)
}

/// Central finite-difference Jacobian of a vector function.
pub fn finite_diff_jacobian(
    f: &dyn Fn(&DVector<f64>) -> Result<DVector<f64>>,
    z: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let fz = f(z)?;
    let mut jac = DMatrix::zeros(fz.len(), z.len());
    for i in 0..z.len() {
        let h = 1e-5 * (1.0 + z[i].abs());
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[i] += h;
        zm[i] -= h;
        let col = (f(&zp)? - f(&zm)?) / (2.0 * h);
        jac.set_column(i, &col);
    }
    Ok(jac)
}

/// Reconstructs the flow field from the decomposition
/// `F(z) = A(z_ref) w + ∫_0^{|w|} B'(z_ref + s ŵ) ŵ ds`, `w = z - z_ref`,
/// by composite-Simpson quadrature. Used to validate problem forms against
/// the structure the limit analysis relies on.
pub fn flow_from_line_integral(
    p: &dyn SaddleProblem,
    z_ref: &DVector<f64>,
    z: &DVector<f64>,
    panels: usize,
) -> Result<DVector<f64>> {
    check_state(z, p.dim())?;
    check_state(z_ref, p.dim())?;
    let w = z - z_ref;
    let r = w.norm();
    let a_ref = p.coupling(z_ref)?;
    if r == 0.0 {
        return p.flow_field(z_ref);
    }
    let w_hat = &w / r;
    let panels = panels.max(2) + panels % 2;
    let h = r / panels as f64;
    let eval = |s: f64| -> Result<DVector<f64>> {
        let point = z_ref + &w_hat * s;
        Ok(p.curvature_shifted(&point, z_ref)? * &w_hat)
    };
    let mut acc = eval(0.0)? + eval(r)?;
    for k in 1..panels {
        let weight = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += eval(k as f64 * h)? * weight;
    }
    Ok(&a_ref * &w + acc * (h / 3.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    #[test]
    fn bilinear_flow_examples() {
        let p = QuadraticSaddle::bilinear_2d();
        // φ_x = y, φ_y = x, flow = (y, -x).
        assert!((p.flow_field(&vec2(1.0, 0.0)).unwrap() - vec2(0.0, -1.0)).norm() < 1e-15);
        let strict = QuadraticSaddle::strict_2d();
        assert!((strict.flow_field(&vec2(1.0, 1.0)).unwrap() - vec2(-1.0, -1.0)).norm() < 1e-15);
        // Saddle points are exactly the zeros of the field.
        assert_eq!(p.flow_field(&vec2(0.0, 0.0)).unwrap().norm(), 0.0);
    }

    #[test]
    fn coupling_and_curvature_of_bilinear() {
        let p = QuadraticSaddle::bilinear_2d();
        let a = p.coupling(&vec2(3.0, -1.0)).unwrap();
        assert!((a - DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])).amax() < 1e-15);
        let b = p.curvature(&vec2(3.0, -1.0)).unwrap();
        assert!(b.amax() < 1e-15);
    }

    #[test]
    fn quartic_curvature_blocks() {
        // φ = -x⁴/4 + x·y: φ_xx = -3x², φ_xy = 1, φ_yy = 0.
        let p = PolynomialSaddle::quartic_example();
        let b = p.curvature(&vec2(1.0, 0.0)).unwrap();
        assert!((b - DMatrix::from_row_slice(2, 2, &[-3.0, 0.0, 0.0, 0.0])).amax() < 1e-14);
        // The coupling is constant, so the shifted curvature equals the
        // plain one everywhere.
        let bp = p
            .curvature_shifted(&vec2(1.0, 0.0), &vec2(0.0, 0.0))
            .unwrap();
        assert!((bp - p.curvature(&vec2(1.0, 0.0)).unwrap()).amax() < 1e-14);
    }

    #[test]
    fn shifted_curvature_is_plain_curvature_for_quadratics() {
        let mut rng = CounterRng::from_seed(5);
        let q = crate::harness::generate::random_quadratic(&mut rng, 2, 2);
        let z = DVector::from_fn(4, |_, _| 2.0 * rng.next_f64() - 1.0);
        let z_ref = DVector::from_fn(4, |_, _| 2.0 * rng.next_f64() - 1.0);
        let b = q.curvature(&z).unwrap();
        let bp = q.curvature_shifted(&z, &z_ref).unwrap();
        assert!((b - bp).amax() < 1e-13);
        // At the reference point the shift vanishes by definition.
        let b0 = q.curvature_shifted(&z_ref, &z_ref).unwrap();
        assert!((b0 - q.curvature(&z_ref).unwrap()).amax() < 1e-13);
    }

    #[test]
    fn gains_transform_bilinear_doubles_coupling() {
        // γx = 4, γy = 1 gives Λ = diag(2, 1), so φ'(x', y') = 2 x' y'.
        let p = QuadraticSaddle::bilinear_2d();
        let gains =
            GainVector::new(DVector::from_vec(vec![4.0]), DVector::from_vec(vec![1.0])).unwrap();
        let q = p.apply_gains(&gains).unwrap();
        assert!((q.pxy()[(0, 0)] - 2.0).abs() < 1e-15);
        let z = vec2(0.7, -0.3);
        assert!((q.value(&z).unwrap() - 2.0 * 0.7 * (-0.3)).abs() < 1e-15);
    }

    #[test]
    fn gains_transform_preserves_concavity_invariants() {
        let mut rng = CounterRng::from_seed(17);
        let q = crate::harness::generate::random_quadratic(&mut rng, 3, 2);
        let gains = crate::harness::generate::random_gains(&mut rng, 3, 2);
        // The congruence-transformed problem still passes construction,
        // which enforces the sign conditions.
        let transformed = q.apply_gains(&gains).unwrap();
        assert_eq!(transformed.primal_dim(), 3);
    }

    #[test]
    fn generic_saddle_validation_catches_wrong_hessian() {
        let value = |z: &DVector<f64>| -0.5 * z[0] * z[0] + 0.5 * z[1] * z[1];
        let gradient = |z: &DVector<f64>| DVector::from_vec(vec![-z[0], z[1]]);
        let wrong_hessian =
            |_: &DVector<f64>| DMatrix::from_row_slice(2, 2, &[-2.0, 0.0, 0.0, 1.0]);
        let result = GenericSaddle::validated(
            1,
            1,
            Box::new(value),
            Box::new(gradient),
            Box::new(wrong_hessian),
            &ProbeOptions::default(),
        );
        assert!(matches!(result, Err(Error::InvalidInput(_))));

        let right_hessian =
            |_: &DVector<f64>| DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]);
        let ok = GenericSaddle::validated(
            1,
            1,
            Box::new(value),
            Box::new(gradient),
            Box::new(right_hessian),
            &ProbeOptions::default(),
        );
        assert!(ok.is_ok());
    }

    #[test]
    fn concavity_probes_reject_convex_in_x() {
        let vars = vec!["x".to_string(), "y".to_string()];
        let poly = parse_polynomial("0.25*x^4 + x*y", &vars).unwrap();
        assert!(PolynomialSaddle::new(1, 1, poly).is_err());
    }

    #[test]
    fn quadratic_constructor_rejects_wrong_signs() {
        let bad = QuadraticSaddle::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DVector::zeros(1),
            DVector::zeros(1),
            0.0,
        );
        assert!(bad.is_err());
        let asym = QuadraticSaddle::new(
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -1.0]),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(1, 1),
            DVector::zeros(2),
            DVector::zeros(1),
            0.0,
        );
        assert!(asym.is_err());
    }

    #[test]
    fn gain_vector_rejects_nonpositive() {
        assert!(
            GainVector::new(DVector::from_vec(vec![0.0]), DVector::from_vec(vec![1.0])).is_err()
        );
        assert!(
            GainVector::new(DVector::from_vec(vec![1.0]), DVector::from_vec(vec![-2.0])).is_err()
        );
    }

    #[test]
    fn lagrangian_gradient_and_hessian_shape() {
        let vars = crate::model::schema::variable_names(2, 0);
        let poly = parse_polynomial("-0.5*x1^2 - 0.5*x2^2", &vars).unwrap();
        let l = LinearConstraintLagrangian::new(
            Utility::Polynomial(poly),
            DMatrix::from_row_slice(1, 2, &[1.0, 2.0]),
            DVector::from_vec(vec![-1.0]),
        )
        .unwrap();
        // φ_y = Dx + e vanishes exactly on the constraint manifold.
        let z = DVector::from_vec(vec![1.0, 0.0, 5.0]);
        let g = l.gradient(&z).unwrap();
        assert!((g[2] - 0.0).abs() < 1e-15);
        let h = l.hessian(&z).unwrap();
        assert!((h[(0, 2)] - 1.0).abs() < 1e-15);
        assert!((h[(1, 2)] - 2.0).abs() < 1e-15);
        assert!((h[(2, 2)]).abs() < 1e-15);
    }

    #[test]
    fn fingerprint_distinguishes_problems_and_is_stable() {
        let a = QuadraticSaddle::bilinear_2d();
        let b = QuadraticSaddle::strict_2d();
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(
            a.fingerprint(),
            QuadraticSaddle::bilinear_2d().fingerprint()
        );
    }
}
