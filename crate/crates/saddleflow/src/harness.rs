//! Reusable verification procedures: each one turns a structural property
//! of the flows into a quantitative pass/fail report. Consumed by the test
//! suite and the CLI `verify` command.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::analysis::{limit_subspace, SaddleSet};
use crate::dynamics::{integrate_flow, EnsembleStats, IntegrateOptions, Trajectory};
use crate::error::{Error, Result};
use crate::expm::matexp_action;
use crate::model::{GainTransformed, GainVector, QuadraticSaddle, SaddleProblem};
use crate::rng::CounterRng;
use crate::subspace::Subspace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CheckOutcome {
    Passed,
    Failed,
    /// The check could not reach a verdict (e.g. no plateau detected);
    /// distinct from failure.
    Inconclusive,
    /// The check had nothing to measure (e.g. trivial direction space).
    VacuousPass,
}

/// Quantitative result of one verification procedure.
#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub outcome: CheckOutcome,
    pub worst_violation: f64,
    pub tolerance: f64,
    pub context: BTreeMap<String, String>,
}

impl CheckReport {
    fn from_violation(
        name: impl Into<String>,
        worst: f64,
        tol: f64,
        context: BTreeMap<String, String>,
    ) -> Self {
        CheckReport {
            name: name.into(),
            outcome: if worst <= tol {
                CheckOutcome::Passed
            } else {
                CheckOutcome::Failed
            },
            worst_violation: worst,
            tolerance: tol,
            context,
        }
    }

    pub fn is_failure(&self) -> bool {
        self.outcome == CheckOutcome::Failed
    }

    pub fn passed(&self) -> bool {
        !self.is_failure()
    }
}

fn ctx(entries: &[(&str, String)]) -> BTreeMap<String, String> {
    entries
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
}

// ---------------------------------------------------------------------------
// Pathwise stability
// ---------------------------------------------------------------------------

/// Shared time grid: the union of both adaptive grids plus a uniform
/// refinement, so monotonicity violations cannot hide between samples.
fn shared_grid(
    p: &dyn SaddleProblem,
    a: &DVector<f64>,
    b: &DVector<f64>,
    t_end: f64,
) -> Result<Vec<f64>> {
    let probe_opts = IntegrateOptions {
        record_adaptive: true,
        ..Default::default()
    };
    let ta = integrate_flow(p, a, t_end, &probe_opts)?;
    let tb = integrate_flow(p, b, t_end, &probe_opts)?;
    let mut grid: Vec<f64> = ta
        .times()
        .iter()
        .chain(tb.times())
        .cloned()
        .chain((1..=256).map(|i| t_end * i as f64 / 256.0))
        .filter(|&t| t > 0.0 && t <= t_end)
        .collect();
    grid.sort_by(|x, y| x.partial_cmp(y).unwrap());
    grid.dedup_by(|x, y| (*x - *y).abs() < 1e-12 * (1.0 + y.abs()));
    Ok(grid)
}

/// Verifies that the distance between two trajectories never increases
/// (up to `slack_rate * (1 + d(0))` per unit time of integrator slack).
pub fn check_pathwise_stability(
    p: &dyn SaddleProblem,
    z0: &DVector<f64>,
    z0_other: &DVector<f64>,
    t_end: f64,
    slack_rate: f64,
) -> Result<CheckReport> {
    if z0.len() != p.dim() || z0_other.len() != p.dim() {
        return Err(Error::input("initial states have wrong dimension"));
    }
    let grid = shared_grid(p, z0, z0_other, t_end)?;
    let opts = IntegrateOptions {
        sample_times: Some(grid.clone()),
        record_adaptive: false,
        ..Default::default()
    };
    let traj_a = integrate_flow(p, z0, t_end, &opts)?;
    let traj_b = integrate_flow(p, z0_other, t_end, &opts)?;
    let d: Vec<f64> = traj_a
        .states()
        .iter()
        .zip(traj_b.states())
        .map(|(a, b)| (a - b).norm())
        .collect();
    let times = traj_a.times();
    let mut worst_rate = 0.0_f64;
    for i in 0..d.len() - 1 {
        let dt = times[i + 1] - times[i];
        if dt > 0.0 {
            worst_rate = worst_rate.max((d[i + 1] - d[i]) / dt);
        }
    }
    let tol = slack_rate * (1.0 + d[0]);
    Ok(CheckReport::from_violation(
        "pathwise_stability",
        worst_rate.max(0.0),
        tol,
        ctx(&[
            ("problem", format!("{:016x}", p.fingerprint())),
            ("horizon", format!("{t_end}")),
            ("initial_distance", format!("{:.6e}", d[0])),
            ("grid_points", format!("{}", times.len())),
        ]),
    ))
}

// ---------------------------------------------------------------------------
// Limit fit
// ---------------------------------------------------------------------------

/// Compares the tail of a trajectory against matrix-exponential propagation
/// under the coupling at the saddle. Requires the distance-to-saddle to
/// have plateaued (decrease below 1e-9 per unit time over the trailing 20%
/// window); otherwise the report is Inconclusive.
pub fn fit_limit_to_linear_ode(
    p: &dyn SaddleProblem,
    saddle: &DVector<f64>,
    traj: &Trajectory,
    tail_fraction: f64,
) -> Result<CheckReport> {
    if !(tail_fraction > 0.0 && tail_fraction < 1.0) {
        return Err(Error::input("tail fraction must be in (0, 1)"));
    }
    let times = traj.times();
    let dist: Vec<f64> = traj.states().iter().map(|z| (z - saddle).norm()).collect();

    // Plateau detection over the trailing 20% of the recording.
    let t_end = traj.final_time();
    let span = traj.span();
    let t_probe = t_end - 0.2 * span;
    let probe_idx = times.iter().position(|&t| t >= t_probe).unwrap_or(0);
    let probe_span = t_end - times[probe_idx];
    let decrease_rate = if probe_span > 0.0 {
        (dist[probe_idx] - dist[dist.len() - 1]) / probe_span
    } else {
        f64::INFINITY
    };
    let mut context = ctx(&[
        ("problem", format!("{:016x}", p.fingerprint())),
        ("plateau_rate", format!("{decrease_rate:.3e}")),
        ("horizon", format!("{t_end}")),
    ]);
    if decrease_rate.abs() > 1e-9 {
        context.insert("reason".into(), "no plateau detected".into());
        return Ok(CheckReport {
            name: "limit_fit".into(),
            outcome: CheckOutcome::Inconclusive,
            worst_violation: f64::NAN,
            tolerance: f64::NAN,
            context,
        });
    }

    let t_tail = t_end - tail_fraction * span;
    let tail_idx = times.iter().position(|&t| t >= t_tail).unwrap_or(0);
    let a = p.coupling(saddle)?;
    let w0 = &traj.states()[tail_idx] - saddle;
    let t0 = times[tail_idx];
    let amplitude = dist[tail_idx..].iter().cloned().fold(0.0, f64::max);
    if amplitude < 1e-9 * (1.0 + saddle.norm()) {
        context.insert("reason".into(), "tail amplitude below guard".into());
        return Ok(CheckReport {
            name: "limit_fit".into(),
            outcome: CheckOutcome::VacuousPass,
            worst_violation: 0.0,
            tolerance: 0.0,
            context,
        });
    }
    let mut worst = 0.0_f64;
    for (t, z) in times[tail_idx..].iter().zip(&traj.states()[tail_idx..]) {
        let predicted = saddle + matexp_action(&a, t - t0, &w0)?;
        worst = worst.max((z - predicted).norm());
    }
    context.insert("tail_amplitude".into(), format!("{amplitude:.6e}"));
    Ok(CheckReport::from_violation(
        "limit_fit",
        worst / amplitude,
        1e-5,
        context,
    ))
}

// ---------------------------------------------------------------------------
// Variance growth
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SlopeEstimate {
    pub slope: f64,
    pub stderr: f64,
}

/// Least-squares slope of `E|z(t)|^2` over a time window, compared either
/// against an expected slope (relative tolerance) or against positivity.
pub fn estimate_variance_growth(
    stats: &EnsembleStats,
    window: (f64, f64),
    expected_slope: Option<f64>,
    rel_tol: f64,
) -> Result<(CheckReport, SlopeEstimate)> {
    if stats.path_count() < 100 {
        return Err(Error::input(
            "variance-growth estimate needs at least 100 paths",
        ));
    }
    let (lo, hi) = window;
    let recorded = (stats.times()[0], *stats.times().last().unwrap());
    if lo >= hi || lo < recorded.0 - 1e-12 || hi > recorded.1 + 1e-12 {
        return Err(Error::input(format!(
            "window [{lo}, {hi}] outside recorded range [{:.3}, {:.3}]",
            recorded.0, recorded.1
        )));
    }
    let points: Vec<(f64, f64)> = stats
        .times()
        .iter()
        .zip(stats.second_moment())
        .filter(|(t, _)| **t >= lo && **t <= hi)
        .map(|(t, m)| (*t, *m))
        .collect();
    if points.len() < 3 {
        return Err(Error::input(
            "window contains fewer than three recorded points",
        ));
    }
    let k = points.len() as f64;
    let t_mean = points.iter().map(|(t, _)| t).sum::<f64>() / k;
    let m_mean = points.iter().map(|(_, m)| m).sum::<f64>() / k;
    let sxx: f64 = points.iter().map(|(t, _)| (t - t_mean).powi(2)).sum();
    let sxy: f64 = points
        .iter()
        .map(|(t, m)| (t - t_mean) * (m - m_mean))
        .sum();
    let slope = sxy / sxx;
    let intercept = m_mean - slope * t_mean;
    let ss_res: f64 = points
        .iter()
        .map(|(t, m)| (m - (intercept + slope * t)).powi(2))
        .sum();
    let stderr_residual = (ss_res / (k - 2.0)).sqrt() / sxx.sqrt();
    // The per-time means share paths, so residual-based errors understate
    // the slope uncertainty badly. The endpoint difference quotient bounds
    // the honest Monte Carlo scale from the recorded per-time errors.
    let window_stderrs: Vec<f64> = stats
        .times()
        .iter()
        .zip(stats.stderr())
        .filter(|(t, _)| **t >= lo && **t <= hi)
        .map(|(_, s)| *s)
        .collect();
    let (se_lo, se_hi) = (window_stderrs[0], window_stderrs[window_stderrs.len() - 1]);
    let span = points[points.len() - 1].0 - points[0].0;
    let stderr_endpoint = (se_lo.powi(2) + se_hi.powi(2)).sqrt() / span.max(1e-300);
    let stderr = stderr_residual.max(stderr_endpoint);
    let estimate = SlopeEstimate { slope, stderr };

    let context = ctx(&[
        ("slope", format!("{slope:.6e}")),
        ("slope_stderr", format!("{stderr:.6e}")),
        ("window", format!("[{lo}, {hi}]")),
        ("paths", format!("{}", stats.path_count())),
        ("seed", format!("{}", stats.seed())),
    ]);
    let report = match expected_slope {
        Some(expected) => CheckReport::from_violation(
            "variance_growth",
            (slope - expected).abs() / expected.abs().max(1e-12),
            rel_tol,
            context,
        ),
        // Positivity: the slope must clear twice its own standard error.
        None => CheckReport::from_violation("variance_growth", 2.0 * stderr - slope, 0.0, context),
    };
    Ok((report, estimate))
}

// ---------------------------------------------------------------------------
// Gains equivalence
// ---------------------------------------------------------------------------

/// Runs the gains-weighted flow of `p` and the plain flow of the
/// gains-transformed problem; the two must coincide under the coordinate
/// map `z = Λ z'` within `tol` in sup norm.
pub fn check_gains_equivalence(
    p: &dyn SaddleProblem,
    gains: &GainVector,
    z0: &DVector<f64>,
    t_end: f64,
    tol: f64,
) -> Result<CheckReport> {
    let lambda = gains.lambda();
    let grid: Vec<f64> = (1..=200).map(|i| t_end * i as f64 / 200.0).collect();
    let opts = IntegrateOptions {
        rel_tol: 1e-10,
        abs_tol: 1e-12,
        sample_times: Some(grid.clone()),
        record_adaptive: false,
        gains: Some(gains.clone()),
        ..Default::default()
    };
    let traj_gained = integrate_flow(p, z0, t_end, &opts)?;

    let transformed = GainTransformed::new(&p, gains)?;
    let z0_prime = z0.component_div(&lambda);
    let opts_plain = IntegrateOptions {
        rel_tol: 1e-10,
        abs_tol: 1e-12,
        sample_times: Some(grid),
        record_adaptive: false,
        ..Default::default()
    };
    let traj_plain = integrate_flow(&transformed, &z0_prime, t_end, &opts_plain)?;

    let mut worst = 0.0_f64;
    for (za, zb) in traj_gained.states().iter().zip(traj_plain.states()) {
        worst = worst.max((za - zb.component_mul(&lambda)).norm());
    }
    Ok(CheckReport::from_violation(
        "gains_equivalence",
        worst,
        tol,
        ctx(&[
            ("problem", format!("{:016x}", p.fingerprint())),
            ("horizon", format!("{t_end}")),
            (
                "gains",
                format!(
                    "x{:?} y{:?}",
                    gains.gamma_x().as_slice(),
                    gains.gamma_y().as_slice()
                ),
            ),
        ]),
    ))
}

// ---------------------------------------------------------------------------
// Orthogonality to the saddle set
// ---------------------------------------------------------------------------

/// Along any trajectory of a quadratic problem, motion has no component in
/// the saddle-set directions. Vacuous when the saddle set is a point.
pub fn check_orthogonality(
    q: &QuadraticSaddle,
    traj: &Trajectory,
    set: &SaddleSet,
) -> Result<CheckReport> {
    let context = ctx(&[
        ("problem", format!("{:016x}", q.fingerprint())),
        ("saddle_dim", format!("{}", set.directions.dim())),
    ]);
    if set.directions.dim() == 0 {
        return Ok(CheckReport {
            name: "saddle_orthogonality".into(),
            outcome: CheckOutcome::VacuousPass,
            worst_violation: 0.0,
            tolerance: 0.0,
            context,
        });
    }
    let proj = set.directions.projector();
    let z0 = &traj.states()[0];
    let mut worst = 0.0_f64;
    for z in traj.states() {
        worst = worst.max((&proj * (z - z0)).norm());
    }
    Ok(CheckReport::from_violation(
        "saddle_orthogonality",
        worst,
        1e-7,
        context,
    ))
}

// ---------------------------------------------------------------------------
// Independent limit-subspace oracle
// ---------------------------------------------------------------------------

/// Brute-force route to the limit subspace of a skew matrix: split space
/// into the eigenspaces of `A²` (symmetric), then inside each rotation
/// eigenspace keep `F ∩ A F` with `F = X ∩ E`, which is exactly the span
/// of the complex eigenvectors of `A` whose real and imaginary parts lie
/// in `X`. Independent of the fixpoint iteration it cross-checks.
pub fn skew_eigenplane_subspace(a: &DMatrix<f64>, x: &Subspace) -> Result<Subspace> {
    let n = x.ambient_dim();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::input("matrix and subspace dimensions disagree"));
    }
    let a2 = a * a;
    let eig = ((&a2 + a2.transpose()) * 0.5).symmetric_eigen();
    let scale = eig
        .eigenvalues
        .iter()
        .map(|l| l.abs())
        .fold(0.0, f64::max)
        .max(1e-300);

    // Group eigenvalues of A² within tolerance.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    let mut result = Subspace::zero(n);
    let mut group: Vec<usize> = Vec::new();
    let mut group_value = f64::NAN;
    let flush = |group: &[usize], value: f64, result: &Subspace| -> Result<Subspace> {
        if group.is_empty() {
            return Ok(result.clone());
        }
        let mut basis = DMatrix::<f64>::zeros(n, group.len());
        for (j, &i) in group.iter().enumerate() {
            basis.set_column(j, &eig.eigenvectors.column(i));
        }
        let espace = Subspace::from_spanning(&basis)?;
        let f = x.intersect(&espace)?;
        let contribution = if value.abs() <= 1e-8 * scale {
            // Kernel of A: real eigenvectors, plain intersection.
            f
        } else if f.dim() == 0 {
            f
        } else {
            let af = Subspace::from_spanning(&(a * f.basis()))?;
            f.intersect(&af)?
        };
        result.sum(&contribution)
    };
    for &i in &order {
        let v = eig.eigenvalues[i];
        if group.is_empty() || (v - group_value).abs() <= 1e-8 * scale {
            group.push(i);
            group_value = v;
        } else {
            result = flush(&group, group_value, &result)?;
            group.clear();
            group.push(i);
            group_value = v;
        }
    }
    result = flush(&group, group_value, &result)?;
    Ok(result)
}

// ---------------------------------------------------------------------------
// Random problem generation
// ---------------------------------------------------------------------------

pub mod generate {
    use super::*;

    /// Random concave-convex quadratic with Gram-form definiteness (never
    /// clipped eigenvalues) and a randomly shifted saddle point.
    pub fn random_quadratic(rng: &mut CounterRng, n: usize, m: usize) -> QuadraticSaddle {
        let gx = DMatrix::from_fn(n, n, |_, _| 2.0 * rng.next_f64() - 1.0);
        let gy = DMatrix::from_fn(m, m, |_, _| 2.0 * rng.next_f64() - 1.0);
        let pxx = -(&gx * gx.transpose());
        let pyy = &gy * gy.transpose();
        let pxy = DMatrix::from_fn(n, m, |_, _| 2.0 * rng.next_f64() - 1.0);
        with_shifted_saddle(rng, pxx, pxy, pyy)
    }

    /// Quadratic with a rank-deficient curvature (Gram factors with fewer
    /// columns), so the curvature kernel is nontrivial but the limit
    /// subspace is whatever the coupling happens to leave invariant.
    pub fn random_degenerate_quadratic(
        rng: &mut CounterRng,
        n: usize,
        m: usize,
    ) -> QuadraticSaddle {
        let rx = (n / 2).max(1).min(n);
        let ry = (m / 2).max(1).min(m);
        let gx = DMatrix::from_fn(n, rx, |_, _| 2.0 * rng.next_f64() - 1.0);
        let gy = DMatrix::from_fn(m, ry, |_, _| 2.0 * rng.next_f64() - 1.0);
        let pxx = -(&gx * gx.transpose());
        let pyy = &gy * gy.transpose();
        let pxy = DMatrix::from_fn(n, m, |_, _| 2.0 * rng.next_f64() - 1.0);
        with_shifted_saddle(rng, pxx, pxy, pyy)
    }

    fn with_shifted_saddle(
        rng: &mut CounterRng,
        pxx: DMatrix<f64>,
        pxy: DMatrix<f64>,
        pyy: DMatrix<f64>,
    ) -> QuadraticSaddle {
        let n = pxx.nrows();
        let m = pyy.nrows();
        let x_bar = DVector::from_fn(n, |_, _| 2.0 * rng.next_f64() - 1.0);
        let y_bar = DVector::from_fn(m, |_, _| 2.0 * rng.next_f64() - 1.0);
        let p = -(&pxx * &x_bar + &pxy * &y_bar);
        let q = -(pxy.transpose() * &x_bar + &pyy * &y_bar);
        QuadraticSaddle::new(pxx, pxy, pyy, p, q, 0.0).expect("gram construction is valid")
    }

    /// A quadratic with a planted oscillatory subspace: `pairs` rotation
    /// planes with distinct frequencies, a strictly definite remainder with
    /// curvature gap at least `gap`, all conjugated by random orthogonal
    /// maps and shifted to a random saddle.
    pub struct PlantedQuadratic {
        pub problem: QuadraticSaddle,
        pub saddle: DVector<f64>,
        /// The planted limit subspace, in saddle-centered coordinates.
        pub modes: Subspace,
        pub frequencies: Vec<f64>,
    }

    pub fn random_planted_quadratic(
        rng: &mut CounterRng,
        n: usize,
        m: usize,
        pairs: usize,
        gap: f64,
    ) -> PlantedQuadratic {
        assert!(pairs >= 1 && pairs <= n.min(m));
        // Distinct frequencies in [0.5, 2.5].
        let frequencies: Vec<f64> = (0..pairs)
            .map(|i| 0.5 + (i as f64 + rng.next_f64().clamp(0.05, 0.95)) * 2.0 / pairs as f64)
            .collect();
        planted_quadratic_with_frequencies(rng, n, m, &frequencies, gap)
    }

    /// Same as [`random_planted_quadratic`] with caller-chosen rotation
    /// frequencies (one oscillation pair per entry).
    pub fn planted_quadratic_with_frequencies(
        rng: &mut CounterRng,
        n: usize,
        m: usize,
        frequencies: &[f64],
        gap: f64,
    ) -> PlantedQuadratic {
        let pairs = frequencies.len();
        assert!(pairs >= 1 && pairs <= n.min(m));
        let frequencies = frequencies.to_vec();

        let mut pxx = DMatrix::<f64>::zeros(n, n);
        let mut pyy = DMatrix::<f64>::zeros(m, m);
        let mut pxy = DMatrix::<f64>::zeros(n, m);
        for (i, &w) in frequencies.iter().enumerate() {
            pxy[(i, i)] = w;
        }
        let (ns, ms) = (n - pairs, m - pairs);
        if ns > 0 {
            let g = DMatrix::from_fn(ns, ns, |_, _| 2.0 * rng.next_f64() - 1.0);
            let strict = -(&g * g.transpose()) - DMatrix::<f64>::identity(ns, ns) * gap;
            pxx.view_mut((pairs, pairs), (ns, ns)).copy_from(&strict);
        }
        if ms > 0 {
            let g = DMatrix::from_fn(ms, ms, |_, _| 2.0 * rng.next_f64() - 1.0);
            let strict = (&g * g.transpose()) + DMatrix::<f64>::identity(ms, ms) * gap;
            pyy.view_mut((pairs, pairs), (ms, ms)).copy_from(&strict);
        }
        if ns > 0 && ms > 0 {
            let cross = DMatrix::from_fn(ns, ms, |_, _| 2.0 * rng.next_f64() - 1.0);
            pxy.view_mut((pairs, pairs), (ns, ms)).copy_from(&cross);
        }

        let qx = random_orthogonal(rng, n);
        let qy = random_orthogonal(rng, m);
        let pxx_c = qx.transpose() * &pxx * &qx;
        let pyy_c = qy.transpose() * &pyy * &qy;
        let pxy_c = qx.transpose() * &pxy * &qy;

        // Planted mode directions: images of the designed rotation axes.
        let mut mode_cols = DMatrix::<f64>::zeros(n + m, 2 * pairs);
        for i in 0..pairs {
            let ex = qx.transpose().column(i).into_owned();
            let ey = qy.transpose().column(i).into_owned();
            mode_cols.view_mut((0, 2 * i), (n, 1)).copy_from(&ex);
            mode_cols.view_mut((n, 2 * i + 1), (m, 1)).copy_from(&ey);
        }
        let modes = Subspace::from_spanning(&mode_cols).expect("planted modes are orthonormal");

        let problem = with_shifted_saddle(rng, pxx_c, pxy_c, pyy_c);
        let saddle = crate::analysis::quadratic_saddle_set(&problem)
            .expect("planted problem is well-posed")
            .expect("planted problem has a saddle")
            .representative;
        PlantedQuadratic {
            problem,
            saddle,
            modes,
            frequencies,
        }
    }

    /// Haar-ish random orthogonal matrix from the QR of a random square.
    pub fn random_orthogonal(rng: &mut CounterRng, n: usize) -> DMatrix<f64> {
        if n == 0 {
            return DMatrix::zeros(0, 0);
        }
        let g = DMatrix::from_fn(n, n, |_, _| rng.next_normal());
        let qr = g.qr();
        qr.q()
    }

    /// Random gains, log-uniform in [0.2, 5].
    pub fn random_gains(rng: &mut CounterRng, n: usize, m: usize) -> GainVector {
        let draw = |rng: &mut CounterRng| {
            let u = rng.next_f64();
            (0.2_f64.ln() + u * (5.0_f64.ln() - 0.2_f64.ln())).exp()
        };
        GainVector::new(
            DVector::from_fn(n, |_, _| draw(rng)),
            DVector::from_fn(m, |_, _| draw(rng)),
        )
        .expect("positive by construction")
    }

    /// Random Lagrangian with concave quadratic utility `-½ x·Mx + b·x`
    /// where `M` is a Gram form of the given rank, plus consistent
    /// constraints so a saddle exists at a random point.
    pub struct RandomLagrangian {
        pub problem: crate::model::LinearConstraintLagrangian,
        pub saddle: DVector<f64>,
        /// Kernel of the utility curvature at the saddle (the flat
        /// directions, exact by construction).
        pub utility_kernel_dim: usize,
        pub utility_curvature: DMatrix<f64>,
    }

    pub fn random_lagrangian_quadratic_u(
        rng: &mut CounterRng,
        n: usize,
        m: usize,
        rank: usize,
    ) -> RandomLagrangian {
        use crate::model::{LinearConstraintLagrangian, Polynomial, Utility};
        let rank = rank.clamp(0, n);
        let mm = if rank == 0 {
            DMatrix::<f64>::zeros(n, n)
        } else {
            let g = DMatrix::from_fn(n, rank, |_, _| 2.0 * rng.next_f64() - 1.0);
            &g * g.transpose()
        };
        let d = DMatrix::from_fn(m, n, |_, _| 2.0 * rng.next_f64() - 1.0);
        let x_bar = DVector::from_fn(n, |_, _| 2.0 * rng.next_f64() - 1.0);
        let y_bar = DVector::from_fn(m, |_, _| 2.0 * rng.next_f64() - 1.0);
        let e = -(&d * &x_bar);
        let b = &mm * &x_bar - d.transpose() * &y_bar;

        // Assemble U = -½ x·Mx + b·x as a polynomial table.
        let mut terms: Vec<(Vec<u16>, f64)> = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if mm[(i, j)] != 0.0 {
                    let mut exps = vec![0u16; n];
                    exps[i] += 1;
                    exps[j] += 1;
                    terms.push((exps, -0.5 * mm[(i, j)]));
                }
            }
            if b[i] != 0.0 {
                let mut exps = vec![0u16; n];
                exps[i] = 1;
                terms.push((exps, b[i]));
            }
        }
        let poly = Polynomial::from_terms(n, &terms).expect("valid table");
        let problem = LinearConstraintLagrangian::new(Utility::Polynomial(poly), d, e)
            .expect("concave by construction");
        let mut saddle = DVector::zeros(n + m);
        saddle.rows_mut(0, n).copy_from(&x_bar);
        saddle.rows_mut(n, m).copy_from(&y_bar);
        RandomLagrangian {
            problem,
            saddle,
            utility_kernel_dim: n - rank,
            utility_curvature: -mm,
        }
    }
}

// ---------------------------------------------------------------------------
// Named suites
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Number of random instances per suite.
    pub instances: usize,
    pub max_dim: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            seed: 0,
            instances: 100,
            max_dim: 5,
        }
    }
}

fn random_dims(rng: &mut CounterRng, max_dim: usize) -> (usize, usize) {
    let n = 1 + (rng.next_u64() as usize) % max_dim;
    let m = 1 + (rng.next_u64() as usize) % max_dim;
    (n, m)
}

/// Pathwise stability on random quadratics, 3 random pairs each.
pub fn suite_pathwise(opts: &SuiteOptions) -> Result<Vec<CheckReport>> {
    let mut rng = CounterRng::from_seed(opts.seed ^ 0x7061);
    let mut reports = Vec::new();
    for i in 0..opts.instances {
        let (n, m) = random_dims(&mut rng, opts.max_dim);
        let q = if i % 3 == 0 {
            generate::random_degenerate_quadratic(&mut rng, n, m)
        } else {
            generate::random_quadratic(&mut rng, n, m)
        };
        for _pair in 0..3 {
            let a = DVector::from_fn(n + m, |_, _| 4.0 * rng.next_f64() - 2.0);
            let b = DVector::from_fn(n + m, |_, _| 4.0 * rng.next_f64() - 2.0);
            let mut report = check_pathwise_stability(&q, &a, &b, 10.0, 1e-7)?;
            report.context.insert("instance".into(), format!("{i}"));
            reports.push(report);
        }
    }
    Ok(reports)
}

/// Gains equivalence on random (problem, gains) pairs.
pub fn suite_gains(opts: &SuiteOptions) -> Result<Vec<CheckReport>> {
    let mut rng = CounterRng::from_seed(opts.seed ^ 0x6a1e);
    let mut reports = Vec::new();
    for i in 0..opts.instances {
        let (n, m) = random_dims(&mut rng, opts.max_dim);
        let q = generate::random_quadratic(&mut rng, n, m);
        let gains = generate::random_gains(&mut rng, n, m);
        let z0 = DVector::from_fn(n + m, |_, _| 4.0 * rng.next_f64() - 2.0);
        let mut report = check_gains_equivalence(&q, &gains, &z0, 10.0, 1e-6)?;
        report.context.insert("instance".into(), format!("{i}"));
        reports.push(report);
    }
    Ok(reports)
}

/// Agreement between the fixpoint limit subspace and the eigenplane oracle
/// on random quadratics (strict, degenerate and planted-oscillation mix).
pub fn suite_limit_oracle(opts: &SuiteOptions) -> Result<Vec<CheckReport>> {
    let mut rng = CounterRng::from_seed(opts.seed ^ 0x51ea);
    let mut reports = Vec::new();
    for i in 0..opts.instances {
        let (n, m) = random_dims(&mut rng, opts.max_dim);
        let (q, saddle) = match i % 3 {
            0 => {
                let q = generate::random_quadratic(&mut rng, n, m);
                let set = crate::analysis::quadratic_saddle_set(&q)?
                    .expect("gram quadratic has a saddle");
                (q, set.representative)
            }
            1 => {
                let q = generate::random_degenerate_quadratic(&mut rng, n, m);
                let set = crate::analysis::quadratic_saddle_set(&q)?
                    .expect("gram quadratic has a saddle");
                (q, set.representative)
            }
            _ => {
                let pairs = 1 + (rng.next_u64() as usize) % n.min(m);
                let planted = generate::random_planted_quadratic(&mut rng, n, m, pairs, 0.3);
                (planted.problem, planted.saddle)
            }
        };
        let computed = limit_subspace(&q, &saddle)?;
        let a = q.coupling(&saddle)?;
        let b = q.curvature(&saddle)?;
        let oracle = skew_eigenplane_subspace(&a, &crate::subspace::nullspace(&b)?)?;
        let distance = computed.distance(&oracle)?;
        let mut report = CheckReport::from_violation(
            "limit_oracle_agreement",
            distance,
            1e-8,
            ctx(&[
                ("instance", format!("{i}")),
                ("dims", format!("n={n} m={m}")),
                ("computed_dim", format!("{}", computed.dim())),
                ("oracle_dim", format!("{}", oracle.dim())),
            ]),
        );
        report
            .context
            .insert("problem".into(), format!("{:016x}", q.fingerprint()));
        reports.push(report);
    }
    Ok(reports)
}

/// All named suites, optionally filtered by substring.
pub fn run_suites(filter: Option<&str>, opts: &SuiteOptions) -> Result<Vec<CheckReport>> {
    let mut reports = Vec::new();
    let wants = |name: &str| filter.is_none_or(|f| name.contains(f));
    if wants("pathwise") {
        reports.extend(suite_pathwise(opts)?);
    }
    if wants("gains") {
        reports.extend(suite_gains(opts)?);
    }
    if wants("limit-oracle") {
        reports.extend(suite_limit_oracle(opts)?);
    }
    Ok(reports)
}
