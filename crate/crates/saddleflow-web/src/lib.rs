//! Browser bindings for the saddleflow core: three interactive operations
//! (simulate a flow, certify a problem, run a noise ensemble), each taking
//! a problem-definition JSON document (same schema as the CLI) and
//! returning a JSON payload for the static demo page to plot.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use wasm_bindgen::prelude::*;

use saddleflow::analysis::{certify, find_saddle};
use saddleflow::dynamics::{integrate_flow, simulate_noisy, IntegrateOptions, NoiseOptions};
use saddleflow::error::Result;
use saddleflow::harness::estimate_variance_growth;
use saddleflow::model::schema::parse_problem_json;

#[derive(Serialize)]
struct ErrorPayload {
    error: String,
}

fn err_json(msg: impl std::fmt::Display) -> String {
    serde_json::to_string(&ErrorPayload {
        error: msg.to_string(),
    })
    .expect("error payload serializes")
}

fn json_or_error(result: Result<impl Serialize>) -> String {
    match result {
        Ok(payload) => match serde_json::to_string(&payload) {
            Ok(text) => text,
            Err(e) => err_json(e),
        },
        Err(e) => err_json(e),
    }
}

#[derive(Serialize)]
struct SimulatePayload {
    times: Vec<f64>,
    /// One row per state coordinate.
    coords: Vec<Vec<f64>>,
    saddle: Option<Vec<f64>>,
    distance_to_saddle: Option<Vec<f64>>,
    final_state: Vec<f64>,
}

/// Integrates the gradient flow of the problem from `z0` over `[0, t_end]`
/// with `samples` uniform output points.
#[wasm_bindgen]
pub fn simulate_flow(problem_json: &str, z0: Vec<f64>, t_end: f64, samples: usize) -> String {
    json_or_error(simulate_impl(problem_json, z0, t_end, samples))
}

fn simulate_impl(
    problem_json: &str,
    z0: Vec<f64>,
    t_end: f64,
    samples: usize,
) -> Result<SimulatePayload> {
    let parsed = parse_problem_json(problem_json)?;
    let p = parsed.problem.as_dyn();
    let z0 = DVector::from_vec(z0);
    let opts = IntegrateOptions::sampled(t_end, samples.clamp(2, 20_000));
    let traj = integrate_flow(p, &z0, t_end, &opts)?;
    let saddle = find_saddle(p, &z0, &Default::default()).ok();
    let distance = saddle
        .as_ref()
        .map(|s| traj.states().iter().map(|z| (z - s).norm()).collect());
    let dim = traj.dim();
    let coords = (0..dim)
        .map(|i| traj.states().iter().map(|z| z[i]).collect())
        .collect();
    Ok(SimulatePayload {
        times: traj.times().to_vec(),
        coords,
        saddle: saddle.map(|s| s.iter().cloned().collect()),
        distance_to_saddle: distance,
        final_state: traj.final_state().iter().cloned().collect(),
    })
}

#[derive(Serialize)]
struct CertifyPayload {
    verdict: String,
    exact: bool,
    saddle: Vec<f64>,
    limit_subspace_dim: usize,
    oscillation_mode_dim: usize,
    mode_basis: Vec<Vec<f64>>,
    notes: Vec<String>,
}

/// Locates a saddle from `guess` and classifies the limiting behaviour.
#[wasm_bindgen]
pub fn certify_problem(problem_json: &str, guess: Vec<f64>) -> String {
    json_or_error(certify_impl(problem_json, guess))
}

fn certify_impl(problem_json: &str, guess: Vec<f64>) -> Result<CertifyPayload> {
    let parsed = parse_problem_json(problem_json)?;
    let p = parsed.problem.as_dyn();
    let saddle = find_saddle(p, &DVector::from_vec(guess), &Default::default())?;
    let cert = certify(p, &saddle)?;
    let mode_basis = (0..cert.oscillation_modes.dim())
        .map(|j| {
            cert.oscillation_modes
                .basis()
                .column(j)
                .iter()
                .cloned()
                .collect()
        })
        .collect();
    Ok(CertifyPayload {
        verdict: format!("{:?}", cert.verdict),
        exact: cert.exactness == saddleflow::analysis::Exactness::Exact,
        saddle: saddle.iter().cloned().collect(),
        limit_subspace_dim: cert.limit_subspace.dim(),
        oscillation_mode_dim: cert.oscillation_modes.dim(),
        mode_basis,
        notes: cert.notes,
    })
}

#[derive(Serialize)]
struct NoisePayload {
    times: Vec<f64>,
    second_moment: Vec<f64>,
    stderr: Vec<f64>,
    slope: Option<f64>,
    slope_stderr: Option<f64>,
}

/// Euler–Maruyama ensemble with isotropic noise of strength `sigma`;
/// returns the second-moment curve and, when enough paths ran, its fitted
/// growth slope over the second half of the horizon.
#[wasm_bindgen]
pub fn noise_ensemble(
    problem_json: &str,
    z0: Vec<f64>,
    sigma: f64,
    t_end: f64,
    dt: f64,
    paths: usize,
    seed: u32,
) -> String {
    json_or_error(noise_impl(
        problem_json,
        z0,
        sigma,
        t_end,
        dt,
        paths,
        seed as u64,
    ))
}

fn noise_impl(
    problem_json: &str,
    z0: Vec<f64>,
    sigma: f64,
    t_end: f64,
    dt: f64,
    paths: usize,
    seed: u64,
) -> Result<NoisePayload> {
    let parsed = parse_problem_json(problem_json)?;
    let p = parsed.problem.as_dyn();
    let sigma_x = DMatrix::<f64>::identity(p.primal_dim(), p.primal_dim()) * sigma;
    let sigma_y = DMatrix::<f64>::identity(p.dual_dim(), p.dual_dim()) * sigma;
    let stats = simulate_noisy(
        p,
        &sigma_x,
        &sigma_y,
        &DVector::from_vec(z0),
        t_end,
        &NoiseOptions {
            dt,
            n_paths: paths.clamp(1, 20_000),
            seed,
            records: 200,
        },
    )?;
    let fit = if stats.path_count() >= 100 {
        estimate_variance_growth(&stats, (t_end * 0.5, t_end), None, 0.1)
            .ok()
            .map(|(_, est)| est)
    } else {
        None
    };
    Ok(NoisePayload {
        times: stats.times().to_vec(),
        second_moment: stats.second_moment().to_vec(),
        stderr: stats.stderr().to_vec(),
        slope: fit.map(|f| f.slope),
        slope_stderr: fit.map(|f| f.stderr),
    })
}
