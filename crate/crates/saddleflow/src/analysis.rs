//! Classification of limiting behaviour: saddle location, the limit
//! subspace that carries every non-convergent trajectory, kernel-condition
//! checks, Lagrangian flat directions, conserved quantities and the
//! convergence certificate.
//!
//! All subspaces are reported in saddle-centered coordinates; the shift
//! (the saddle point itself) is recorded alongside.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::expm::matexp_action;
use crate::model::{LinearConstraintLagrangian, QuadraticSaddle, SaddleProblem};
use crate::subspace::{
    maximal_invariant_subspace, nullspace, operator_norm, AffineSubspace, Subspace,
};

/// |flow| threshold below which a point counts as an equilibrium.
pub const SADDLE_RESIDUAL_TOL: f64 = 1e-8;

// ---------------------------------------------------------------------------
// Saddle location
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct NewtonOptions {
    pub gradient_tol: f64,
    pub max_iterations: usize,
    /// Horizon of the flow-integration fallback when Newton stalls.
    pub fallback_horizon: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            gradient_tol: 1e-10,
            max_iterations: 200,
            fallback_horizon: 50.0,
        }
    }
}

fn pinv_solve(h: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    crate::linalg::pinv_solve(
        h,
        rhs,
        crate::subspace::default_rank_tol(h.nrows(), h.ncols()),
    )
}

fn newton_descent(
    p: &dyn SaddleProblem,
    start: &DVector<f64>,
    opts: &NewtonOptions,
) -> Result<std::result::Result<DVector<f64>, DVector<f64>>> {
    let mut z = start.clone();
    let mut g = p.gradient(&z)?;
    for _ in 0..opts.max_iterations {
        if g.norm() < opts.gradient_tol {
            return Ok(Ok(z));
        }
        let h = p.checked_hessian(&z)?;
        let step = pinv_solve(&h, &(-&g));
        if step.norm() < 1e-16 * (1.0 + z.norm()) {
            return Ok(Err(z)); // stalled: pseudo-inverse step vanished
        }
        // Armijo backtracking on |gradient|^2.
        let merit = g.norm_squared();
        let mut alpha = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let trial = &z + &step * alpha;
            let g_trial = p.gradient(&trial)?;
            if g_trial.norm_squared() <= merit * (1.0 - 1e-4 * alpha) {
                z = trial;
                g = g_trial;
                improved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !improved {
            return Ok(Err(z));
        }
    }
    if g.norm() < opts.gradient_tol {
        return Ok(Ok(z));
    }
    Ok(Err(z))
}

/// Finds a saddle point by damped Newton on the full gradient, falling back
/// to a long flow integration plus a Newton polish when the iteration
/// stalls.
pub fn find_saddle(
    p: &dyn SaddleProblem,
    guess: &DVector<f64>,
    opts: &NewtonOptions,
) -> Result<DVector<f64>> {
    if guess.len() != p.dim() {
        return Err(Error::input("guess has wrong dimension"));
    }
    if guess.iter().any(|x| !x.is_finite()) {
        return Err(Error::input("guess contains non-finite entries"));
    }

    let stalled = match newton_descent(p, guess, opts)? {
        Ok(z) => return Ok(z),
        Err(z) => z,
    };

    // Newton stalled; ride the flow toward the limit set, then polish.
    let flow_opts = crate::dynamics::IntegrateOptions {
        rel_tol: 1e-8,
        abs_tol: 1e-10,
        record_adaptive: false,
        sample_times: Some(vec![opts.fallback_horizon]),
        ..Default::default()
    };
    let reached = crate::dynamics::integrate_flow(p, &stalled, opts.fallback_horizon, &flow_opts)
        .map(|traj| traj.final_state().clone())
        .unwrap_or(stalled);

    match newton_descent(p, &reached, opts)? {
        Ok(z) => Ok(z),
        Err(z) => {
            let diverged = z.norm() > 1e6 * (1.0 + guess.norm());
            let g = p.gradient(&z)?.norm();
            Err(Error::SaddleNotFound(if diverged {
                format!("iterates diverged (|z| = {:.3e})", z.norm())
            } else {
                format!("stalled with |gradient| = {g:.3e} (singular Hessian along the path?)")
            }))
        }
    }
}

// ---------------------------------------------------------------------------
// Saddle set of a quadratic problem
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Exactness {
    /// The set description is exact (quadratic stationarity system).
    Exact,
    /// Only a local description is available.
    LocalOnly,
}

/// The set of saddle points, represented as `representative + directions`
/// (exact for quadratic problems, where the set is an affine subspace).
#[derive(Debug, Clone)]
pub struct SaddleSet {
    pub representative: DVector<f64>,
    pub directions: Subspace,
    pub exactness: Exactness,
}

/// Solves the quadratic stationarity system. Returns `None` when no saddle
/// exists (inconsistent linear system).
pub fn quadratic_saddle_set(q: &QuadraticSaddle) -> Result<Option<SaddleSet>> {
    let h = q.full_hessian();
    let dim = q.dim();
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, q.primal_dim()).copy_from(&(-q.linear_x()));
    rhs.rows_mut(q.primal_dim(), q.dual_dim())
        .copy_from(&(-q.linear_y()));
    let representative = pinv_solve(&h, &rhs);
    let residual = (&h * &representative - &rhs).norm();
    if residual > 1e-8 * (1.0 + rhs.norm()) {
        return Ok(None);
    }
    let directions = nullspace(&h)?;
    Ok(Some(SaddleSet {
        representative,
        directions,
        exactness: Exactness::Exact,
    }))
}

// ---------------------------------------------------------------------------
// Limit subspace
// ---------------------------------------------------------------------------

fn validate_saddle(p: &dyn SaddleProblem, z: &DVector<f64>) -> Result<()> {
    let f = p.flow_field(z)?;
    if f.norm() > SADDLE_RESIDUAL_TOL * (1.0 + z.norm()) {
        return Err(Error::input(format!(
            "point is not a saddle: |flow| = {:.3e}",
            f.norm()
        )));
    }
    Ok(())
}

/// The subspace (in saddle-centered coordinates) that contains every
/// trajectory staying a constant distance from all saddle points: the
/// largest coupling-invariant subspace of the curvature kernel at the
/// saddle. Exact for quadratic problems; an over-approximation otherwise.
pub fn limit_subspace(p: &dyn SaddleProblem, saddle: &DVector<f64>) -> Result<Subspace> {
    validate_saddle(p, saddle)?;
    let a = p.coupling(saddle)?;
    let b = p.curvature(saddle)?;
    maximal_invariant_subspace(&a, &nullspace(&b)?)
}

/// Projected variant: the limit subspace of the flow restricted to an
/// affine subspace `v`, computed from `Π A Π` on `ker(Π B Π) ∩ V`.
pub fn projected_limit_subspace(
    p: &dyn SaddleProblem,
    v: &AffineSubspace,
    saddle: &DVector<f64>,
) -> Result<Subspace> {
    if v.ambient_dim() != p.dim() {
        return Err(Error::input(
            "constraint subspace has wrong ambient dimension",
        ));
    }
    if !v.contains_point(saddle, 1e-9) {
        return Err(Error::input(
            "equilibrium is not on the constraint subspace",
        ));
    }
    let pi = v.directions().projector();
    let f = p.flow_field(saddle)?;
    if (&pi * &f).norm() > SADDLE_RESIDUAL_TOL * (1.0 + saddle.norm()) {
        return Err(Error::input(format!(
            "point is not an equilibrium of the projected flow: |Π flow| = {:.3e}",
            (&pi * &f).norm()
        )));
    }
    let a_pi = &pi * p.coupling(saddle)? * &pi;
    let b_pi = &pi * p.curvature(saddle)? * &pi;
    let kernel = nullspace(&b_pi)?.intersect(v.directions())?;
    maximal_invariant_subspace(&a_pi, &kernel)
}

// ---------------------------------------------------------------------------
// Certificates
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    GloballyConvergent,
    PossiblyOscillatory,
    Inconclusive,
}

/// Classification verdict for a problem at a saddle point.
#[derive(Debug, Clone)]
pub struct Certificate {
    pub verdict: Verdict,
    /// Limit-subspace directions that leave the saddle set: the candidate
    /// oscillation modes.
    pub oscillation_modes: Subspace,
    /// The full limit subspace at the saddle (saddle-centered).
    pub limit_subspace: Subspace,
    /// The saddle point the analysis was centered on.
    pub saddle: DVector<f64>,
    pub exactness: Exactness,
    pub notes: Vec<String>,
}

/// Classifies the limiting behaviour at a validated saddle point.
///
/// Quadratic problems get an exact verdict: the limit subspace equals the
/// set of limiting solutions, so nontrivial modes certify oscillations and
/// trivial modes certify global convergence. For other problems the limit
/// subspace only bounds the limiting set from above, so the verdict is
/// `GloballyConvergent` (trivial bound) or `Inconclusive`.
pub fn certify(p: &dyn SaddleProblem, saddle: &DVector<f64>) -> Result<Certificate> {
    let limit = limit_subspace(p, saddle)?;
    let mut notes = Vec::new();

    if let Some(q) = p.as_quadratic() {
        let set = quadratic_saddle_set(&q)?.ok_or_else(|| {
            Error::input("validated saddle but the stationarity system is inconsistent")
        })?;
        let saddle_dirs = set.directions;
        if !limit.contains_subspace(&saddle_dirs, 1e-7) {
            notes.push(
                "saddle-set directions unexpectedly leave the limit subspace; results may be ill-conditioned"
                    .to_string(),
            );
        }
        let modes = limit.intersect(&saddle_dirs.complement())?;
        let verdict = if modes.dim() == 0 {
            Verdict::GloballyConvergent
        } else {
            Verdict::PossiblyOscillatory
        };
        notes.push(format!(
            "quadratic problem: limit subspace is exact (dim {}), saddle set has dim {}",
            limit.dim(),
            saddle_dirs.dim()
        ));
        if verdict == Verdict::PossiblyOscillatory {
            notes.push(
                "every nonzero mode direction carries a genuine periodic limit solution"
                    .to_string(),
            );
        }
        return Ok(Certificate {
            verdict,
            oscillation_modes: modes,
            limit_subspace: limit,
            saddle: saddle.clone(),
            exactness: Exactness::Exact,
            notes,
        });
    }

    // Non-quadratic: only the one-sided inclusion is available.
    let verdict = if limit.dim() == 0 {
        notes.push(
            "limit subspace is trivial, so every trajectory converges to a saddle point"
                .to_string(),
        );
        Verdict::GloballyConvergent
    } else {
        notes.push(format!(
            "limit subspace has dim {}, but for non-quadratic problems it may strictly \
             overestimate the limiting set; use the kernel-condition check on candidate \
             trajectories to prune it",
            limit.dim()
        ));
        Verdict::Inconclusive
    };
    Ok(Certificate {
        verdict,
        oscillation_modes: limit.clone(),
        limit_subspace: limit,
        saddle: saddle.clone(),
        exactness: Exactness::LocalOnly,
        notes,
    })
}

// ---------------------------------------------------------------------------
// Kernel condition
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct KernelConditionReport {
    pub holds: bool,
    /// Largest normalized residual over the (t, r) grid.
    pub worst_residual: f64,
    pub worst_time: f64,
    pub worst_r: f64,
    pub tolerance: f64,
    pub r_grid_points: usize,
}

/// Tests whether a candidate limit trajectory satisfies the kernel
/// conditions required of a true limiting solution: at every sampled state
/// `z(t)` (in saddle-centered coordinates `w = z - z̄`) and every `r` in a
/// uniform grid on `[0, 1]`, both `B(z̄ + r w) w` and
/// `(A(z̄ + r w) - A(z̄)) w` must vanish.
pub fn check_kernel_condition(
    p: &dyn SaddleProblem,
    saddle: &DVector<f64>,
    candidate: &Trajectory,
    r_grid_size: usize,
    tol: f64,
) -> Result<KernelConditionReport> {
    if candidate.dim() != p.dim() || saddle.len() != p.dim() {
        return Err(Error::input("dimension mismatch in kernel-condition check"));
    }
    // Quadratic problems have constant derivative matrices, so a single r
    // already decides the condition exactly.
    let k = if p.as_quadratic().is_some() {
        1
    } else {
        r_grid_size.max(1)
    };
    let a_ref = p.coupling(saddle)?;
    let mut worst = 0.0_f64;
    let mut worst_time = candidate.times()[0];
    let mut worst_r = 0.0;
    for (t, z) in candidate.times().iter().zip(candidate.states()) {
        let w = z - saddle;
        let scale = 1.0 + w.norm();
        for i in 0..=k {
            let r = i as f64 / k as f64;
            let point = saddle + &w * r;
            let res_b = (p.curvature(&point)? * &w).norm();
            let res_a = ((p.coupling(&point)? - &a_ref) * &w).norm();
            let residual = res_b.max(res_a) / scale;
            if residual > worst {
                worst = residual;
                worst_time = *t;
                worst_r = r;
            }
        }
    }
    Ok(KernelConditionReport {
        holds: worst < tol,
        worst_residual: worst,
        worst_time,
        worst_r,
        tolerance: tol,
        r_grid_points: k + 1,
    })
}

// ---------------------------------------------------------------------------
// Lagrangian structure
// ---------------------------------------------------------------------------

/// Directions along which the utility is linear through the primal saddle
/// point, as an affine subspace of the primal space.
#[derive(Debug, Clone)]
pub struct FlatSubspace {
    pub affine: AffineSubspace,
    /// Exact (polynomial coefficient forms) or sampled heuristic.
    pub exact: bool,
}

/// Computes the utility's flat directions through `x_saddle`.
///
/// Polynomial path: a direction is flat iff the line-restricted polynomial
/// `s -> U(x̄ + s d)` has no terms of degree >= 2, computed exactly as the
/// common nullspace of the Gram matrices of the degree >= 2 derivative
/// tensors at `x̄`. Callback path: iteratively intersects with the kernel
/// of sampled curvature, flagged as a heuristic.
pub fn utility_flat_subspace(
    l: &LinearConstraintLagrangian,
    x_saddle: &DVector<f64>,
) -> Result<FlatSubspace> {
    let n = l.primal_dim();
    if x_saddle.len() != n {
        return Err(Error::input("primal point has wrong dimension"));
    }
    if let Some(poly) = l.utility().as_polynomial() {
        if poly.degree() > 12 {
            return Err(Error::input(format!(
                "utility degree {} exceeds the supported cap of 12 for the exact flat-direction computation",
                poly.degree()
            )));
        }
        let mut dirs = Subspace::full(n);
        for k in 2..=poly.degree().max(2) {
            if dirs.dim() == 0 {
                break;
            }
            let gram = poly.derivative_gram(k, x_saddle.as_slice());
            dirs = dirs.intersect(&nullspace(&gram)?)?;
        }
        return Ok(FlatSubspace {
            affine: AffineSubspace::through(x_saddle, dirs)?,
            exact: true,
        });
    }

    // Callback utility: sampled curvature heuristic.
    let mut dirs = nullspace(&l.utility().hessian(x_saddle))?;
    let mut rng = crate::rng::CounterRng::from_seed(0xf1a7);
    for _ in 0..n {
        if dirs.dim() == 0 {
            break;
        }
        let mut curvature_sum = DMatrix::<f64>::zeros(n, n);
        for _ in 0..16 {
            let coeffs = DVector::from_fn(dirs.dim(), |_, _| 2.0 * rng.next_f64() - 1.0);
            let xi = x_saddle + dirs.basis() * coeffs;
            curvature_sum += -l.utility().hessian(&xi);
        }
        let refined = dirs.intersect(&nullspace(&curvature_sum)?)?;
        if refined.dim() == dirs.dim() {
            break;
        }
        dirs = refined;
    }
    Ok(FlatSubspace {
        affine: AffineSubspace::through(x_saddle, dirs)?,
        exact: false,
    })
}

/// The limiting modes of a linear-constraint Lagrangian at a saddle:
/// the largest subspace of `W x R^m` invariant under the constraint
/// coupling `[[0, D^T], [-D, 0]]`.
#[derive(Debug, Clone)]
pub struct LagrangianModes {
    pub saddle: DVector<f64>,
    pub modes: Subspace,
    pub flat_exact: bool,
}

pub fn lagrangian_limit_modes(
    l: &LinearConstraintLagrangian,
    saddle: &DVector<f64>,
) -> Result<LagrangianModes> {
    let (n, m) = (l.primal_dim(), l.dual_dim());
    if saddle.len() != n + m {
        return Err(Error::input("saddle has wrong dimension"));
    }
    validate_saddle(l, saddle)?;
    let x_saddle = saddle.rows(0, n).into_owned();
    let flat = utility_flat_subspace(l, &x_saddle)?;
    let w_dirs = flat.affine.directions();

    let d = l.constraint_matrix();
    let mut coupling = DMatrix::<f64>::zeros(n + m, n + m);
    coupling.view_mut((0, n), (n, m)).copy_from(&d.transpose());
    coupling.view_mut((n, 0), (m, n)).copy_from(&(-d));

    // W x R^m inside R^{n+m}.
    let mut cols = DMatrix::<f64>::zeros(n + m, w_dirs.dim() + m);
    cols.view_mut((0, 0), (n, w_dirs.dim()))
        .copy_from(w_dirs.basis());
    cols.view_mut((n, w_dirs.dim()), (m, m))
        .copy_from(&DMatrix::identity(m, m));
    let x = Subspace::from_spanning(&cols)?;

    Ok(LagrangianModes {
        saddle: saddle.clone(),
        modes: maximal_invariant_subspace(&coupling, &x)?,
        flat_exact: flat.exact,
    })
}

// ---------------------------------------------------------------------------
// Conserved quantity and averages
// ---------------------------------------------------------------------------

/// `W(t; z) = ((e^{tA} v)^T z)^2`; constant along every solution whenever
/// the line through `v` consists of limiting solutions.
pub fn conserved_quantity(
    a: &DMatrix<f64>,
    v: &DVector<f64>,
    t: f64,
    z: &DVector<f64>,
) -> Result<f64> {
    let defect = operator_norm(&(a + a.transpose()));
    if defect > 1e-8 * operator_norm(a).max(1.0) {
        return Err(Error::input(
            "conserved quantity needs a skew-symmetric matrix",
        ));
    }
    if v.len() != a.nrows() || z.len() != a.nrows() {
        return Err(Error::input("dimension mismatch"));
    }
    let vt = matexp_action(a, t, v)?;
    Ok(vt.dot(z).powi(2))
}

#[derive(Debug, Clone)]
pub struct AverageOptions {
    /// Minimum time span the averaging window must cover.
    pub min_span: f64,
    /// Use only the trailing fraction of the recording.
    pub tail_fraction: f64,
}

impl Default for AverageOptions {
    fn default() -> Self {
        AverageOptions {
            min_span: 1.0,
            tail_fraction: 1.0,
        }
    }
}

/// Trapezoidal time-average `(1/T) ∫ z dt` over the tail window.
pub fn average_position(traj: &Trajectory, opts: &AverageOptions) -> Result<DVector<f64>> {
    if !(opts.tail_fraction > 0.0 && opts.tail_fraction <= 1.0) {
        return Err(Error::input("tail fraction must be in (0, 1]"));
    }
    let t_end = traj.final_time();
    let t_start = t_end - traj.span() * opts.tail_fraction;
    let idx0 = traj
        .times()
        .iter()
        .position(|&t| t >= t_start - 1e-12)
        .unwrap_or(0);
    let times = &traj.times()[idx0..];
    let states = &traj.states()[idx0..];
    if times.len() < 2 {
        return Err(Error::input(
            "averaging window contains fewer than two samples",
        ));
    }
    let span = times[times.len() - 1] - times[0];
    if span < opts.min_span {
        return Err(Error::input(format!(
            "trajectory window spans {span:.3e}, below the configured minimum {:.3e}",
            opts.min_span
        )));
    }
    let mut acc = DVector::zeros(traj.dim());
    for i in 0..times.len() - 1 {
        let h = times[i + 1] - times[i];
        acc += (&states[i] + &states[i + 1]) * (0.5 * h);
    }
    Ok(acc / span)
}
