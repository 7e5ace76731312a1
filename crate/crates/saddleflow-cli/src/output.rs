//! Command implementations and report serialization.

use std::path::Path;

use nalgebra::DVector;
use serde::Serialize;

use saddleflow::analysis::{
    certify, check_kernel_condition, find_saddle, Exactness, KernelConditionReport, Verdict,
};
use saddleflow::dynamics::csv::{ensemble_to_csv, trajectory_to_csv};
use saddleflow::dynamics::{integrate_flow, simulate_noisy, IntegrateOptions, NoiseOptions};
use saddleflow::error::{Error, Result};
use saddleflow::expm::matexp_action;
use saddleflow::harness::{
    estimate_variance_growth, run_suites, CheckOutcome, CheckReport, SuiteOptions,
};
use saddleflow::model::schema::ParsedProblem;
use saddleflow::model::SaddleProblem;

use crate::config::{gains_from_block, load_scenario, subspace_from_block, to_matrix, to_vector};

fn now_unix(enabled: bool) -> Option<u64> {
    if !enabled {
        return None;
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .ok()
        .map(|d| d.as_secs())
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| Error::Schema(format!("cannot write {}: {e}", p.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)
        .map_err(|e| Error::Schema(format!("cannot write {}: {e}", path.display())))
}

fn to_json(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("reports serialize")
}

fn basis_rows(s: &saddleflow::Subspace) -> Vec<Vec<f64>> {
    (0..s.dim())
        .map(|j| s.basis().column(j).iter().cloned().collect())
        .collect()
}

fn require_problem(problem: Option<ParsedProblem>) -> Result<ParsedProblem> {
    problem.ok_or_else(|| {
        Error::Schema("this command requires a `problem` entry in the config".into())
    })
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

pub struct SimulateOverrides {
    pub t: Option<f64>,
    pub samples: Option<usize>,
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
}

#[derive(Serialize)]
struct SimulateSummary {
    problem_form: String,
    problem_fingerprint: String,
    horizon: f64,
    samples: usize,
    gains: bool,
    projected: bool,
    final_state: Vec<f64>,
    saddle: Option<Vec<f64>>,
    final_distance_to_saddle: Option<f64>,
    min_distance_to_saddle: Option<f64>,
    max_distance_to_saddle: Option<f64>,
    notes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    created_unix: Option<u64>,
}

pub fn cmd_simulate(
    config_path: &Path,
    out: &Path,
    summary_path: Option<&Path>,
    overrides: SimulateOverrides,
    timestamp: bool,
) -> Result<bool> {
    let (config, problem) = load_scenario(config_path)?;
    let problem = require_problem(problem)?;
    let block = config
        .simulate
        .as_ref()
        .ok_or_else(|| Error::Schema("config has no `simulate` block".into()))?;
    let p = problem.problem.as_dyn();

    let t_end = overrides.t.unwrap_or(block.t);
    let samples = overrides.samples.or(block.samples).unwrap_or(400);
    let mut opts = IntegrateOptions::sampled(t_end, samples.max(2));
    opts.rel_tol = overrides.rel_tol.or(block.rel_tol).unwrap_or(1e-8);
    opts.abs_tol = overrides.abs_tol.or(block.abs_tol).unwrap_or(1e-10);
    if let Some(ms) = block.max_step {
        opts.max_step = ms;
    }
    // Gains priority: simulate block, then the problem file's gains entry.
    opts.gains = match (&block.gains, &problem.gains) {
        (Some(g), _) => Some(gains_from_block(g)?),
        (None, Some(g)) => Some(g.clone()),
        (None, None) => None,
    };
    if let Some(s) = &block.subspace {
        opts.constraint = Some(subspace_from_block(s)?);
    }

    let z0 = to_vector(&block.z0);
    let traj = integrate_flow(p, &z0, t_end, &opts)?;
    write_file(out, &trajectory_to_csv(&traj))?;

    let mut notes = Vec::new();
    let guess = config
        .certify
        .as_ref()
        .map(|c| to_vector(&c.guess))
        .unwrap_or_else(|| z0.clone());
    let saddle = match find_saddle(p, &guess, &Default::default()) {
        Ok(s) => Some(s),
        Err(e) => {
            notes.push(format!("saddle location failed: {e}"));
            None
        }
    };
    let distances: Option<Vec<f64>> = saddle
        .as_ref()
        .map(|s| traj.states().iter().map(|z| (z - s).norm()).collect());

    let summary = SimulateSummary {
        problem_form: problem.problem.form_name().to_string(),
        problem_fingerprint: format!("{:016x}", p.fingerprint()),
        horizon: t_end,
        samples: traj.len(),
        gains: opts.gains.is_some(),
        projected: opts.constraint.is_some(),
        final_state: traj.final_state().iter().cloned().collect(),
        saddle: saddle.as_ref().map(|s| s.iter().cloned().collect()),
        final_distance_to_saddle: distances.as_ref().map(|d| d[d.len() - 1]),
        min_distance_to_saddle: distances
            .as_ref()
            .map(|d| d.iter().cloned().fold(f64::INFINITY, f64::min)),
        max_distance_to_saddle: distances
            .as_ref()
            .map(|d| d.iter().cloned().fold(0.0, f64::max)),
        notes,
        created_unix: now_unix(timestamp),
    };
    write_or_print(summary_path, &to_json(&summary))?;
    Ok(false)
}

// ---------------------------------------------------------------------------
// certify
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct CertificateReport {
    verdict: Verdict,
    exactness: Exactness,
    saddle: Vec<f64>,
    saddle_residual: f64,
    limit_subspace_dim: usize,
    limit_subspace_basis: Vec<Vec<f64>>,
    oscillation_mode_dim: usize,
    oscillation_mode_basis: Vec<Vec<f64>>,
    /// Kernel-condition screening of sampled candidate modes (only run
    /// when the certificate alone is inconclusive).
    #[serde(skip_serializing_if = "Option::is_none")]
    kernel_check: Option<KernelScreening>,
    notes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    created_unix: Option<u64>,
}

#[derive(Serialize)]
struct KernelScreening {
    candidates: usize,
    rejected: usize,
    r_grid_points: usize,
    tolerance: f64,
    worst_residuals: Vec<f64>,
    reports: Vec<KernelConditionReport>,
}

pub fn cmd_certify(config_path: &Path, out: Option<&Path>, timestamp: bool) -> Result<bool> {
    let (config, problem) = load_scenario(config_path)?;
    let problem = require_problem(problem)?;
    let block = config
        .certify
        .as_ref()
        .ok_or_else(|| Error::Schema("config has no `certify` block".into()))?;
    let p = problem.problem.as_dyn();

    let saddle = find_saddle(p, &to_vector(&block.guess), &Default::default())?;
    let cert = certify(p, &saddle)?;
    let residual = p.flow_field(&saddle)?.norm();

    let mut notes = cert.notes.clone();
    let kernel_check = if cert.verdict == Verdict::Inconclusive && cert.oscillation_modes.dim() > 0
    {
        let screening = screen_candidate_modes(p, &saddle, &cert.oscillation_modes)?;
        if screening.rejected == screening.candidates {
            notes.push(
                "kernel screening: every sampled candidate mode violates the kernel conditions, \
                 so none of them carries a limiting solution"
                    .to_string(),
            );
        } else {
            notes.push(format!(
                "kernel screening: {} of {} sampled candidate modes satisfy the kernel \
                 conditions on the grid",
                screening.candidates - screening.rejected,
                screening.candidates
            ));
        }
        Some(screening)
    } else {
        None
    };

    let report = CertificateReport {
        verdict: cert.verdict,
        exactness: cert.exactness,
        saddle: saddle.iter().cloned().collect(),
        saddle_residual: residual,
        limit_subspace_dim: cert.limit_subspace.dim(),
        limit_subspace_basis: basis_rows(&cert.limit_subspace),
        oscillation_mode_dim: cert.oscillation_modes.dim(),
        oscillation_mode_basis: basis_rows(&cert.oscillation_modes),
        kernel_check,
        notes,
        created_unix: now_unix(timestamp),
    };
    write_or_print(out, &to_json(&report))?;
    Ok(false)
}

/// Runs the kernel-condition check on a unit-radius linear-flow candidate
/// along each oscillation-mode basis vector.
fn screen_candidate_modes(
    p: &dyn SaddleProblem,
    saddle: &DVector<f64>,
    modes: &saddleflow::Subspace,
) -> Result<KernelScreening> {
    let a = p.coupling(saddle)?;
    let times: Vec<f64> = (0..=64).map(|i| i as f64 * (10.0 / 64.0)).collect();
    let mut reports = Vec::new();
    let mut rejected = 0usize;
    for j in 0..modes.dim() {
        let v = modes.basis().column(j).into_owned();
        let mut states = Vec::with_capacity(times.len());
        for &t in &times {
            states.push(saddle + matexp_action(&a, t, &v)?);
        }
        let candidate = saddleflow::dynamics::Trajectory::new(
            times.clone(),
            states,
            saddleflow::dynamics::TrajectoryMeta::external("mode-candidate"),
        )?;
        let report = check_kernel_condition(p, saddle, &candidate, 16, 1e-6)?;
        if !report.holds {
            rejected += 1;
        }
        reports.push(report);
    }
    Ok(KernelScreening {
        candidates: modes.dim(),
        rejected,
        r_grid_points: 17,
        tolerance: 1e-6,
        worst_residuals: reports.iter().map(|r| r.worst_residual).collect(),
        reports,
    })
}

// ---------------------------------------------------------------------------
// noise
// ---------------------------------------------------------------------------

pub struct NoiseOverrides {
    pub dt: Option<f64>,
    pub paths: Option<usize>,
    pub seed: Option<u64>,
    pub dt_check: bool,
}

#[derive(Serialize)]
struct NoiseReport {
    paths: usize,
    seed: u64,
    dt: f64,
    horizon: f64,
    records: usize,
    window: (f64, f64),
    slope: Option<f64>,
    slope_stderr: Option<f64>,
    expected_slope: Option<f64>,
    slope_check_passed: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dt_check: Option<DtCheck>,
    final_second_moment: f64,
    wide_stderr: bool,
    notes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    created_unix: Option<u64>,
}

#[derive(Serialize)]
struct DtCheck {
    half_dt: f64,
    half_dt_slope: f64,
    half_dt_stderr: f64,
    agree_within_stderr: bool,
}

pub fn cmd_noise(
    config_path: &Path,
    out: &Path,
    report_path: Option<&Path>,
    overrides: NoiseOverrides,
    timestamp: bool,
) -> Result<bool> {
    let (config, problem) = load_scenario(config_path)?;
    let problem = require_problem(problem)?;
    let block = config
        .noise
        .as_ref()
        .ok_or_else(|| Error::Schema("config has no `noise` block".into()))?;
    let p = problem.problem.as_dyn();

    let sigma_x = to_matrix(&block.sigma_x, "noise.sigma_x")?;
    let sigma_y = to_matrix(&block.sigma_y, "noise.sigma_y")?;
    let z0 = to_vector(&block.z0);
    let dt = overrides.dt.unwrap_or(block.dt);
    let opts = NoiseOptions {
        dt,
        n_paths: overrides.paths.unwrap_or(block.paths),
        seed: overrides.seed.unwrap_or(block.seed),
        records: block.records.unwrap_or(200),
    };
    let stats = simulate_noisy(p, &sigma_x, &sigma_y, &z0, block.t, &opts)?;
    write_file(out, &ensemble_to_csv(&stats))?;

    let window = block.window.unwrap_or((block.t * 0.5, block.t));
    let mut notes = Vec::new();
    let mut failed = false;
    let wide_stderr = opts.n_paths < 100;

    let (slope, stderr, slope_check_passed) = if wide_stderr {
        notes.push(format!(
            "only {} paths: standard errors too wide for a slope fit (need >= 100)",
            opts.n_paths
        ));
        (None, None, None)
    } else {
        let (report, est) = estimate_variance_growth(
            &stats,
            window,
            block.expected_slope,
            block.slope_rel_tol.unwrap_or(0.1),
        )?;
        let check = block.expected_slope.map(|_| report.passed());
        if check == Some(false) {
            failed = true;
            notes.push(format!(
                "fitted slope {:.4} misses the expected {:.4} beyond tolerance",
                est.slope,
                block.expected_slope.unwrap()
            ));
        }
        (Some(est.slope), Some(est.stderr), check)
    };

    let dt_check = if overrides.dt_check || block.dt_check.unwrap_or(false) {
        if wide_stderr {
            notes.push("dt check skipped: too few paths".into());
            None
        } else {
            let half_opts = NoiseOptions {
                dt: dt / 2.0,
                ..opts.clone()
            };
            let half_stats = simulate_noisy(p, &sigma_x, &sigma_y, &z0, block.t, &half_opts)?;
            let (_, half_est) = estimate_variance_growth(&half_stats, window, None, 0.1)?;
            let combined = (stderr.unwrap().powi(2) + half_est.stderr.powi(2)).sqrt();
            let agree = (slope.unwrap() - half_est.slope).abs() <= 3.0 * combined.max(1e-12);
            if !agree {
                failed = true;
                notes.push(format!(
                    "dt consistency: slopes {:.4} (dt) vs {:.4} (dt/2) disagree beyond 3x combined stderr",
                    slope.unwrap(),
                    half_est.slope
                ));
            }
            Some(DtCheck {
                half_dt: dt / 2.0,
                half_dt_slope: half_est.slope,
                half_dt_stderr: half_est.stderr,
                agree_within_stderr: agree,
            })
        }
    } else {
        None
    };

    let report = NoiseReport {
        paths: opts.n_paths,
        seed: opts.seed,
        dt,
        horizon: block.t,
        records: stats.times().len() - 1,
        window,
        slope,
        slope_stderr: stderr,
        expected_slope: block.expected_slope,
        slope_check_passed,
        dt_check,
        final_second_moment: *stats.second_moment().last().unwrap(),
        wide_stderr,
        notes,
        created_unix: now_unix(timestamp),
    };
    write_or_print(report_path, &to_json(&report))?;
    Ok(failed)
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct VerifyReport {
    total: usize,
    passed: usize,
    failed: usize,
    inconclusive: usize,
    vacuous: usize,
    seed: u64,
    instances: usize,
    reports: Vec<CheckReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    created_unix: Option<u64>,
}

pub fn cmd_verify(
    config_path: Option<&Path>,
    suite_flag: Option<&str>,
    seed_flag: Option<u64>,
    instances_flag: Option<usize>,
    out: Option<&Path>,
    timestamp: bool,
) -> Result<bool> {
    let verify_block = match config_path {
        Some(path) => load_scenario(path)?.0.verify,
        None => None,
    };

    let suites_owned = suite_flag
        .map(str::to_string)
        .or_else(|| verify_block.as_ref().and_then(|v| v.suites.clone()));
    let opts = SuiteOptions {
        seed: seed_flag
            .or_else(|| verify_block.as_ref().and_then(|v| v.seed))
            .unwrap_or(0),
        instances: instances_flag
            .or_else(|| verify_block.as_ref().and_then(|v| v.instances))
            .unwrap_or(100),
        max_dim: verify_block.as_ref().and_then(|v| v.max_dim).unwrap_or(5),
    };

    let reports = run_suites(suites_owned.as_deref(), &opts)?;
    if reports.is_empty() {
        return Err(Error::Schema(format!(
            "no suite matches filter {:?} (known: pathwise, gains, limit-oracle)",
            suites_owned
        )));
    }

    let count = |o: CheckOutcome| reports.iter().filter(|r| r.outcome == o).count();
    let summary = VerifyReport {
        total: reports.len(),
        passed: count(CheckOutcome::Passed),
        failed: count(CheckOutcome::Failed),
        inconclusive: count(CheckOutcome::Inconclusive),
        vacuous: count(CheckOutcome::VacuousPass),
        seed: opts.seed,
        instances: opts.instances,
        reports,
        created_unix: now_unix(timestamp),
    };

    // One line per check plus a totals table on stdout.
    for r in &summary.reports {
        println!(
            "{:<24} {:<12} violation {:>12.4e}  tol {:>9.1e}",
            r.name,
            format!("{:?}", r.outcome),
            r.worst_violation,
            r.tolerance
        );
    }
    println!("---");
    println!(
        "total {}  passed {}  failed {}  inconclusive {}  vacuous {}",
        summary.total, summary.passed, summary.failed, summary.inconclusive, summary.vacuous
    );
    if let Some(path) = out {
        write_file(path, &to_json(&summary))?;
    }
    Ok(summary.failed > 0)
}
