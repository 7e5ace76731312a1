//! Time integration of the saddle-point flows: the deterministic gradient
//! method (optionally gains-weighted or projected onto an affine subspace),
//! the linear limit flow, and Euler–Maruyama noise ensembles.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expm::matexp_action;
use crate::model::{GainVector, SaddleProblem};
use crate::subspace::{operator_norm, AffineSubspace};

pub mod csv;
pub mod rk45;
mod sde;

pub use sde::{simulate_noisy, EnsembleStats, NoiseOptions};

/// A time-stamped solution record.
#[derive(Debug, Clone)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<DVector<f64>>,
    meta: TrajectoryMeta,
}

#[derive(Debug, Clone)]
pub struct TrajectoryMeta {
    pub integrator: String,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub problem_fingerprint: u64,
    pub seed: Option<u64>,
}

impl TrajectoryMeta {
    pub fn external(name: &str) -> Self {
        TrajectoryMeta {
            integrator: name.to_string(),
            rel_tol: 0.0,
            abs_tol: 0.0,
            problem_fingerprint: 0,
            seed: None,
        }
    }
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<DVector<f64>>, meta: TrajectoryMeta) -> Result<Self> {
        if times.len() != states.len() {
            return Err(Error::input("times and states have different lengths"));
        }
        if times.len() < 2 {
            return Err(Error::input("a trajectory needs at least two samples"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::input("trajectory times must be strictly increasing"));
        }
        let dim = states[0].len();
        for s in &states {
            if s.len() != dim {
                return Err(Error::input(
                    "trajectory states have inconsistent dimensions",
                ));
            }
            if s.iter().any(|x| !x.is_finite()) {
                return Err(Error::input("trajectory contains non-finite states"));
            }
        }
        Ok(Trajectory {
            times,
            states,
            meta,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn meta(&self) -> &TrajectoryMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn span(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }

    pub fn final_time(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn final_state(&self) -> &DVector<f64> {
        &self.states[self.states.len() - 1]
    }

    /// Largest state distance against another trajectory recorded on the
    /// same time grid.
    pub fn sup_distance(&self, other: &Trajectory) -> Result<f64> {
        if self.times.len() != other.times.len()
            || self
                .times
                .iter()
                .zip(&other.times)
                .any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + a.abs()))
        {
            return Err(Error::input("trajectories are on different time grids"));
        }
        Ok(self
            .states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max))
    }
}

/// Options for [`integrate_flow`].
#[derive(Clone)]
pub struct IntegrateOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    /// Per-coordinate gains; `None` means the plain flow.
    pub gains: Option<GainVector>,
    /// Restrict the flow to an affine subspace (projected dynamics).
    pub constraint: Option<AffineSubspace>,
    /// Extra sample times for dense output (strictly increasing).
    pub sample_times: Option<Vec<f64>>,
    /// Record every accepted adaptive step.
    pub record_adaptive: bool,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        IntegrateOptions {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_step: f64::INFINITY,
            gains: None,
            constraint: None,
            sample_times: None,
            record_adaptive: true,
        }
    }
}

impl IntegrateOptions {
    /// Uniform sampling with `count` intervals over `[0, t_end]`,
    /// without the adaptive points.
    pub fn sampled(t_end: f64, count: usize) -> Self {
        let times: Vec<f64> = (1..=count)
            .map(|i| t_end * i as f64 / count as f64)
            .collect();
        IntegrateOptions {
            sample_times: Some(times),
            record_adaptive: false,
            ..Default::default()
        }
    }

    pub fn with_tols(mut self, rel: f64, abs: f64) -> Self {
        self.rel_tol = rel;
        self.abs_tol = abs;
        self
    }
}

/// Integrates `dz/dt = F(z)` (flow field of `p`) from `z0` over `[0, t_end]`.
///
/// With gains the field becomes `diag(γ) F(z)`. With a constraint the field
/// is projected onto the subspace directions and the state re-projected
/// after every accepted step; `z0` must already lie on the subspace.
/// Combining gains with a constraint would need a weighted projection and
/// is rejected.
pub fn integrate_flow(
    p: &dyn SaddleProblem,
    z0: &DVector<f64>,
    t_end: f64,
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    if z0.len() != p.dim() {
        return Err(Error::input(format!(
            "initial state has length {} but the problem dimension is {}",
            z0.len(),
            p.dim()
        )));
    }
    if z0.iter().any(|x| !x.is_finite()) {
        return Err(Error::input("initial state contains non-finite entries"));
    }
    if opts.gains.is_some() && opts.constraint.is_some() {
        return Err(Error::input(
            "gains combined with a subspace constraint require a weighted projection, which is not supported",
        ));
    }
    if let Some(g) = &opts.gains {
        if g.primal_dim() != p.primal_dim() || g.dual_dim() != p.dual_dim() {
            return Err(Error::input("gain vector dimensions do not match problem"));
        }
    }
    if let Some(v) = &opts.constraint {
        if v.ambient_dim() != p.dim() {
            return Err(Error::input(
                "constraint subspace has wrong ambient dimension",
            ));
        }
        if v.distance_to(z0) > 1e-9 * (1.0 + z0.norm()) {
            return Err(Error::input(format!(
                "initial state is off the constraint subspace by {:.3e}",
                v.distance_to(z0)
            )));
        }
    }

    let gains = opts.gains.as_ref().map(|g| g.concatenated());
    let projector = opts.constraint.as_ref().map(|v| v.directions().projector());
    let rhs = |z: &DVector<f64>| -> Result<DVector<f64>> {
        let mut f = p.flow_field(z)?;
        if let Some(g) = &gains {
            f.component_mul_assign(g);
        }
        if let Some(pi) = &projector {
            f = pi * f;
        }
        Ok(f)
    };

    let reproject = opts.constraint.as_ref().map(|v| {
        let v = v.clone();
        move |z: &mut DVector<f64>| {
            *z = v.project_point(z);
        }
    });
    let post: Option<rk45::StateHook<'_>> = match &reproject {
        Some(f) => Some(f),
        None => None,
    };

    let rk_opts = rk45::Rk45Options {
        rel_tol: opts.rel_tol,
        abs_tol: opts.abs_tol,
        max_step: opts.max_step,
        ..Default::default()
    };
    let empty: Vec<f64> = Vec::new();
    let plan = rk45::SamplePlan {
        adaptive: opts.record_adaptive,
        times: opts.sample_times.as_deref().unwrap_or(&empty),
    };
    let (times, states) = rk45::integrate(rhs, 0.0, z0, t_end, &rk_opts, &plan, post)?;

    Trajectory::new(
        times,
        states,
        TrajectoryMeta {
            integrator: "dopri5".to_string(),
            rel_tol: opts.rel_tol,
            abs_tol: opts.abs_tol,
            problem_fingerprint: p.fingerprint(),
            seed: None,
        },
    )
}

/// Propagates `z(t) = e^{tA} z0` at the given (strictly increasing) times.
///
/// `a` must be skew-symmetric within 1e-8: the limit flow of the gradient
/// method is always generated by a skew matrix, so anything else is an
/// input error.
pub fn linear_limit_flow(a: &DMatrix<f64>, z0: &DVector<f64>, times: &[f64]) -> Result<Trajectory> {
    if a.nrows() != a.ncols() || a.nrows() != z0.len() {
        return Err(Error::input("matrix and state dimensions disagree"));
    }
    let skew_defect = operator_norm(&(a + a.transpose()));
    if skew_defect > 1e-8 * operator_norm(a).max(1.0) {
        return Err(Error::input(format!(
            "matrix is not skew-symmetric (defect {skew_defect:.3e})"
        )));
    }
    if times.len() < 2 {
        return Err(Error::input("need at least two sample times"));
    }
    let mut states = Vec::with_capacity(times.len());
    for &t in times {
        states.push(matexp_action(a, t, z0)?);
    }
    Trajectory::new(
        times.to_vec(),
        states,
        TrajectoryMeta {
            integrator: "matexp".to_string(),
            rel_tol: 0.0,
            abs_tol: 0.0,
            problem_fingerprint: 0,
            seed: None,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::QuadraticSaddle;

    fn vec2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    #[test]
    fn bilinear_orbit_is_a_circle() {
        let p = QuadraticSaddle::bilinear_2d();
        let z0 = vec2(1.0, 0.0);
        let traj =
            integrate_flow(&p, &z0, 2.0 * std::f64::consts::PI, &Default::default()).unwrap();
        assert!((traj.final_state() - &z0).norm() < 1e-6);
        for s in traj.states() {
            assert!((s.norm() - 1.0).abs() < 1e-7);
        }
    }

    #[test]
    fn strict_quadratic_decays_to_origin() {
        let p = QuadraticSaddle::strict_2d();
        let traj = integrate_flow(&p, &vec2(1.0, 1.0), 20.0, &Default::default()).unwrap();
        assert!(traj.final_state().norm() < 1e-6);
    }

    #[test]
    fn equilibrium_start_stays_put() {
        let p = QuadraticSaddle::bilinear_2d();
        let traj = integrate_flow(&p, &vec2(0.0, 0.0), 5.0, &Default::default()).unwrap();
        for s in traj.states() {
            assert!(s.norm() < 1e-12);
        }
    }

    #[test]
    fn sampled_grid_is_respected() {
        let p = QuadraticSaddle::bilinear_2d();
        let opts = IntegrateOptions::sampled(1.0, 10);
        let traj = integrate_flow(&p, &vec2(1.0, 0.0), 1.0, &opts).unwrap();
        assert_eq!(traj.len(), 11);
        assert!((traj.times()[3] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn linear_limit_flow_rotation() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let times: Vec<f64> = vec![0.0, std::f64::consts::PI / 2.0, std::f64::consts::PI];
        let traj = linear_limit_flow(&a, &vec2(1.0, 0.0), &times).unwrap();
        assert!((&traj.states()[2] - vec2(-1.0, 0.0)).norm() < 1e-12);
        for s in traj.states() {
            assert!((s.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_limit_flow_zero_matrix_is_constant() {
        let a = DMatrix::<f64>::zeros(2, 2);
        let traj = linear_limit_flow(&a, &vec2(0.3, -0.7), &[0.0, 1.0, 2.0]).unwrap();
        for s in traj.states() {
            assert!((s - vec2(0.3, -0.7)).norm() < 1e-15);
        }
    }

    #[test]
    fn linear_limit_flow_rejects_non_skew() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert!(linear_limit_flow(&a, &vec2(1.0, 0.0), &[0.0, 1.0]).is_err());
    }

    #[test]
    fn projected_flow_stays_on_subspace() {
        // Strict quadratic restricted to the diagonal line: pure decay
        // along the line, never leaving it.
        let p = QuadraticSaddle::strict_2d();
        let line = crate::subspace::Subspace::line(&vec2(1.0, 1.0)).unwrap();
        let v = crate::subspace::AffineSubspace::through(&vec2(0.0, 0.0), line).unwrap();
        let opts = IntegrateOptions {
            constraint: Some(v.clone()),
            ..Default::default()
        };
        let traj = integrate_flow(&p, &vec2(1.0, 1.0), 15.0, &opts).unwrap();
        for z in traj.states() {
            assert!(v.distance_to(z) < 1e-8);
        }
        assert!(traj.final_state().norm() < 1e-6);
        // Off-subspace starts are rejected up front.
        let bad = integrate_flow(&p, &vec2(1.0, 0.0), 1.0, &opts);
        assert!(matches!(bad, Err(crate::error::Error::InvalidInput(_))));
    }

    #[test]
    fn gains_with_constraint_is_rejected() {
        let p = QuadraticSaddle::strict_2d();
        let line = crate::subspace::Subspace::line(&vec2(1.0, 1.0)).unwrap();
        let opts = IntegrateOptions {
            constraint: Some(
                crate::subspace::AffineSubspace::through(&vec2(0.0, 0.0), line).unwrap(),
            ),
            gains: Some(crate::model::GainVector::ones(1, 1)),
            ..Default::default()
        };
        assert!(integrate_flow(&p, &vec2(1.0, 1.0), 1.0, &opts).is_err());
    }

    #[test]
    fn distance_to_saddle_never_increases() {
        let mut rng = crate::rng::CounterRng::from_seed(31);
        for _ in 0..5 {
            let q = crate::harness::generate::random_quadratic(&mut rng, 2, 2);
            let saddle = crate::analysis::quadratic_saddle_set(&q)
                .unwrap()
                .unwrap()
                .representative;
            let z0 = nalgebra::DVector::from_fn(4, |_, _| 3.0 * (2.0 * rng.next_f64() - 1.0));
            let traj =
                integrate_flow(&q, &z0, 10.0, &IntegrateOptions::sampled(10.0, 200)).unwrap();
            let d: Vec<f64> = traj.states().iter().map(|z| (z - &saddle).norm()).collect();
            for w in d.windows(2) {
                assert!(w[1] <= w[0] + 1e-7 * (1.0 + d[0]));
            }
        }
    }

    #[test]
    fn failing_callback_surfaces_as_evaluation_error() {
        let value = |_: &nalgebra::DVector<f64>| f64::NAN;
        let gradient =
            |_: &nalgebra::DVector<f64>| nalgebra::DVector::from_vec(vec![f64::NAN, f64::NAN]);
        let hessian = |_: &nalgebra::DVector<f64>| nalgebra::DMatrix::zeros(2, 2);
        let p = crate::model::GenericSaddle::new(
            1,
            1,
            Box::new(value),
            Box::new(gradient),
            Box::new(hessian),
        )
        .unwrap();
        let out = integrate_flow(&p, &vec2(1.0, 0.0), 1.0, &Default::default());
        assert!(matches!(out, Err(crate::error::Error::Evaluation(_))));
    }

    #[test]
    fn block_rotations_conserve_block_norms() {
        let mut a = DMatrix::<f64>::zeros(4, 4);
        a[(0, 1)] = 1.0;
        a[(1, 0)] = -1.0;
        a[(2, 3)] = 2.0;
        a[(3, 2)] = -2.0;
        let z0 = DVector::from_vec(vec![1.0, 0.0, 0.5, 0.5]);
        let times: Vec<f64> = (0..20).map(|i| i as f64 * 0.2).collect();
        let traj = linear_limit_flow(&a, &z0, &times).unwrap();
        for s in traj.states() {
            let b1 = (s[0] * s[0] + s[1] * s[1]).sqrt();
            let b2 = (s[2] * s[2] + s[3] * s[3]).sqrt();
            assert!((b1 - 1.0).abs() < 1e-12);
            assert!((b2 - 0.5_f64.hypot(0.5)).abs() < 1e-12);
        }
    }
}
