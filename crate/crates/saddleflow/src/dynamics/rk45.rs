//! Adaptive embedded Runge–Kutta 5(4) (Dormand–Prince) with FSAL, PI-free
//! step control and 4th-order dense output.

use nalgebra::DVector;

use crate::error::{Error, Result};

// Butcher tableau (the stage abscissae are implicit: the flow is
// autonomous, so only the a-coefficients matter).
const A2: [f64; 1] = [0.2];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [
    19372.0 / 6561.0,
    -25360.0 / 2187.0,
    64448.0 / 6561.0,
    -212.0 / 729.0,
];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
const B: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
// b - b_hat: weights of the embedded error estimate.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
// Dense-output coefficients.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;

#[derive(Debug, Clone)]
pub struct Rk45Options {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub max_steps: usize,
}

impl Default for Rk45Options {
    fn default() -> Self {
        Rk45Options {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_step: f64::INFINITY,
            max_steps: 50_000_000,
        }
    }
}

/// Quartic interpolant over one accepted step.
struct DenseSegment {
    t: f64,
    h: f64,
    cont: [DVector<f64>; 5],
}

impl DenseSegment {
    fn eval(&self, ts: f64) -> DVector<f64> {
        let theta = (ts - self.t) / self.h;
        let theta1 = 1.0 - theta;
        &self.cont[0]
            + (&self.cont[1]
                + (&self.cont[2] + (&self.cont[3] + &self.cont[4] * theta1) * theta) * theta1)
                * theta
    }
}

/// What the integrator should record.
pub struct SamplePlan<'a> {
    /// Record every accepted step.
    pub adaptive: bool,
    /// Strictly increasing extra sample times inside `[t0, t_end]`,
    /// evaluated with the dense interpolant.
    pub times: &'a [f64],
}

/// Hook applied to every accepted state and dense sample.
pub type StateHook<'a> = &'a dyn Fn(&mut DVector<f64>);

/// Integrates `dz/dt = rhs(z)` from `t0` to `t_end > t0`.
///
/// `post_accept` runs on every accepted state and every dense sample
/// (used to re-project constrained flows back onto their subspace).
pub fn integrate<F>(
    mut rhs: F,
    t0: f64,
    z0: &DVector<f64>,
    t_end: f64,
    opts: &Rk45Options,
    plan: &SamplePlan<'_>,
    post_accept: Option<StateHook<'_>>,
) -> Result<(Vec<f64>, Vec<DVector<f64>>)>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    if !t_end.is_finite() || t_end <= t0 {
        return Err(Error::input(format!(
            "horizon must exceed the start time (t0 = {t0}, t_end = {t_end})"
        )));
    }
    if !opts.rel_tol.is_finite()
        || opts.rel_tol <= 0.0
        || !opts.abs_tol.is_finite()
        || opts.abs_tol <= 0.0
    {
        return Err(Error::input("tolerances must be positive"));
    }
    if plan.times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::input("sample times must be strictly increasing"));
    }
    if plan
        .times
        .iter()
        .any(|&ts| ts < t0 - 1e-12 || ts > t_end + 1e-12)
    {
        return Err(Error::input("sample times must lie within the horizon"));
    }

    let n = z0.len();
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut next_sample = 0usize;

    // Always record the initial state.
    times.push(t0);
    states.push(z0.clone());
    while next_sample < plan.times.len() && plan.times[next_sample] <= t0 {
        next_sample += 1;
    }

    let mut t = t0;
    let mut z = z0.clone();
    let mut k1 = rhs(&z)?;
    let mut h = initial_step(&mut rhs, t0, &z, &k1, t_end, opts)?;

    let mut ks: [DVector<f64>; 7] = [
        k1.clone(),
        DVector::zeros(n),
        DVector::zeros(n),
        DVector::zeros(n),
        DVector::zeros(n),
        DVector::zeros(n),
        DVector::zeros(n),
    ];

    let mut rejected_last = false;
    for _step in 0..opts.max_steps {
        if t >= t_end {
            break;
        }
        h = h.min(opts.max_step).min(t_end - t);
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(Error::StepSizeUnderflow { t, h });
        }

        ks[0] = k1.clone();
        let stage = |ks: &[DVector<f64>; 7], coeffs: &[f64]| -> DVector<f64> {
            let mut acc = DVector::zeros(n);
            for (i, &a) in coeffs.iter().enumerate() {
                if a != 0.0 {
                    acc += &ks[i] * a;
                }
            }
            acc
        };
        ks[1] = rhs(&(&z + stage(&ks, &A2) * h))?;
        ks[2] = rhs(&(&z + stage(&ks, &A3) * h))?;
        ks[3] = rhs(&(&z + stage(&ks, &A4) * h))?;
        ks[4] = rhs(&(&z + stage(&ks, &A5) * h))?;
        ks[5] = rhs(&(&z + stage(&ks, &A6) * h))?;
        let z_new = &z + stage(&ks, &B) * h;
        ks[6] = rhs(&z_new)?;

        // Weighted RMS error of the embedded pair.
        let mut err_sq = 0.0;
        let err_vec = {
            let mut acc = DVector::zeros(n);
            for (i, &e) in E.iter().enumerate() {
                if e != 0.0 {
                    acc += &ks[i] * e;
                }
            }
            acc * h
        };
        for j in 0..n {
            let sc = opts.abs_tol + opts.rel_tol * z[j].abs().max(z_new[j].abs());
            err_sq += (err_vec[j] / sc).powi(2);
        }
        let err = (err_sq / n as f64).sqrt();

        if !err.is_finite() {
            return Err(Error::eval(format!(
                "non-finite state during integration near t = {t:.6e}"
            )));
        }

        if err <= 1.0 {
            // Accept: lay down the dense interpolant, then emit samples.
            let mut seg: Option<DenseSegment> = None;
            if next_sample < plan.times.len() && plan.times[next_sample] <= t + h + 1e-12 {
                let ydiff = &z_new - &z;
                let bspl = &ks[0] * h - &ydiff;
                let cont4 = &ydiff - &ks[6] * h - &bspl;
                let cont5 = (&ks[0] * D1
                    + &ks[2] * D3
                    + &ks[3] * D4
                    + &ks[4] * D5
                    + &ks[5] * D6
                    + &ks[6] * D7)
                    * h;
                seg = Some(DenseSegment {
                    t,
                    h,
                    cont: [z.clone(), ydiff, bspl, cont4, cont5],
                });
            }
            let t_new = t + h;
            while next_sample < plan.times.len() && plan.times[next_sample] <= t_new + 1e-12 {
                let ts = plan.times[next_sample].min(t_new);
                let mut sample = if (ts - t_new).abs() < 1e-14 * t_new.abs().max(1.0) {
                    z_new.clone()
                } else {
                    seg.as_ref()
                        .expect("segment built when samples pending")
                        .eval(ts)
                };
                if let Some(post) = post_accept {
                    post(&mut sample);
                }
                if ts > *times.last().unwrap() {
                    times.push(ts);
                    states.push(sample);
                }
                next_sample += 1;
            }

            t = t_new;
            z = z_new;
            if let Some(post) = post_accept {
                post(&mut z);
                ks[6] = rhs(&z)?;
            }
            k1 = ks[6].clone();

            if plan.adaptive && t > *times.last().unwrap() {
                times.push(t);
                states.push(z.clone());
            }

            let mut fac = SAFETY * err.powf(-0.2);
            fac = fac.clamp(FAC_MIN, if rejected_last { 1.0 } else { FAC_MAX });
            h *= fac;
            rejected_last = false;
        } else {
            h *= (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, 1.0);
            rejected_last = true;
        }
    }

    if t < t_end {
        return Err(Error::eval(format!(
            "integration exhausted {} steps before reaching t_end (t = {t:.6e})",
            opts.max_steps
        )));
    }

    // Guarantee the final state is recorded even without adaptive output.
    if *times.last().unwrap() < t_end {
        times.push(t_end);
        states.push(z);
    }

    Ok((times, states))
}

/// Standard automatic initial-step heuristic.
fn initial_step<F>(
    rhs: &mut F,
    t0: f64,
    z0: &DVector<f64>,
    f0: &DVector<f64>,
    t_end: f64,
    opts: &Rk45Options,
) -> Result<f64>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = z0.len();
    let sc = |z: &DVector<f64>, j: usize| opts.abs_tol + opts.rel_tol * z[j].abs();
    let d0 = (0..n)
        .map(|j| (z0[j] / sc(z0, j)).powi(2))
        .sum::<f64>()
        .sqrt()
        / (n as f64).sqrt();
    let d1 = (0..n)
        .map(|j| (f0[j] / sc(z0, j)).powi(2))
        .sum::<f64>()
        .sqrt()
        / (n as f64).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let z1 = z0 + f0 * h0;
    let f1 = rhs(&z1)?;
    let d2 = (0..n)
        .map(|j| ((f1[j] - f0[j]) / sc(z0, j)).powi(2))
        .sum::<f64>()
        .sqrt()
        / (n as f64).sqrt()
        / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    Ok(h1.min(100.0 * h0).min(t_end - t0).min(opts.max_step))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rotation_rhs(z: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_vec(vec![z[1], -z[0]]))
    }

    #[test]
    fn circle_returns_home() {
        let z0 = DVector::from_vec(vec![1.0, 0.0]);
        let opts = Rk45Options::default();
        let plan = SamplePlan {
            adaptive: true,
            times: &[],
        };
        let (times, states) = integrate(
            rotation_rhs,
            0.0,
            &z0,
            2.0 * std::f64::consts::PI,
            &opts,
            &plan,
            None,
        )
        .unwrap();
        assert!(times.len() >= 3);
        let last = states.last().unwrap();
        assert!((last - &z0).norm() < 1e-7);
        for s in &states {
            assert!((s.norm() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn dense_output_matches_closed_form() {
        let z0 = DVector::from_vec(vec![1.0, 0.0]);
        let opts = Rk45Options::default();
        let sample: Vec<f64> = (1..=100).map(|i| 0.05 * i as f64).collect();
        let plan = SamplePlan {
            adaptive: false,
            times: &sample,
        };
        let (times, states) = integrate(rotation_rhs, 0.0, &z0, 5.0, &opts, &plan, None).unwrap();
        for (t, s) in times.iter().zip(&states) {
            let expected = DVector::from_vec(vec![t.cos(), -t.sin()]);
            assert!(
                (s - expected).norm() < 1e-7,
                "t = {t}: error {}",
                (s - DVector::from_vec(vec![t.cos(), -t.sin()])).norm()
            );
        }
        assert_eq!(times.len(), 101);
    }

    #[test]
    fn exponential_decay_is_accurate() {
        let z0 = DVector::from_vec(vec![1.0]);
        let opts = Rk45Options::default();
        let plan = SamplePlan {
            adaptive: true,
            times: &[],
        };
        let (times, states) =
            integrate(|z| Ok(-z.clone()), 0.0, &z0, 5.0, &opts, &plan, None).unwrap();
        for (t, s) in times.iter().zip(&states) {
            assert!((s[0] - (-t).exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_horizon_and_samples() {
        let z0 = DVector::from_vec(vec![1.0]);
        let opts = Rk45Options::default();
        let plan = SamplePlan {
            adaptive: true,
            times: &[],
        };
        assert!(integrate(|z| Ok(-z.clone()), 1.0, &z0, 1.0, &opts, &plan, None).is_err());
        let bad = SamplePlan {
            adaptive: true,
            times: &[0.5, 0.5],
        };
        assert!(integrate(|z| Ok(-z.clone()), 0.0, &z0, 1.0, &opts, &bad, None).is_err());
    }
}
