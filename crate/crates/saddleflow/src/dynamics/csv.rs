//! CSV writers and readers for trajectories and ensembles.
//!
//! Trajectory schema: header `t,z_1,...,z_d`, one row per sample.
//! Ensemble schema: header `t,mean_1,...,mean_d,second_moment,stderr`.
//! Floats are written with 17 significant digits so files round-trip
//! losslessly through the readers below.

use std::fmt::Write as _;

use nalgebra::DVector;

use crate::dynamics::{EnsembleStats, Trajectory, TrajectoryMeta};
use crate::error::{Error, Result};

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn trajectory_to_csv(traj: &Trajectory) -> String {
    let dim = traj.dim();
    let mut out = String::new();
    out.push('t');
    for i in 1..=dim {
        let _ = write!(out, ",z_{i}");
    }
    out.push('\n');
    for (t, s) in traj.times().iter().zip(traj.states()) {
        out.push_str(&fmt_f64(*t));
        for v in s.iter() {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

pub fn trajectory_from_csv(text: &str) -> Result<Trajectory> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Schema("empty trajectory CSV".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"t") || cols.len() < 2 {
        return Err(Error::Schema(
            "trajectory CSV header must be t,z_1,...".into(),
        ));
    }
    let dim = cols.len() - 1;
    let mut times = Vec::new();
    let mut states = Vec::new();
    for (row, line) in lines.enumerate() {
        let values = parse_row(line, dim + 1, row)?;
        times.push(values[0]);
        states.push(DVector::from_vec(values[1..].to_vec()));
    }
    Trajectory::new(times, states, TrajectoryMeta::external("csv"))
}

pub fn ensemble_to_csv(stats: &EnsembleStats) -> String {
    let dim = stats.dim();
    let mut out = String::new();
    out.push('t');
    for i in 1..=dim {
        let _ = write!(out, ",mean_{i}");
    }
    out.push_str(",second_moment,stderr\n");
    for (i, t) in stats.times().iter().enumerate() {
        out.push_str(&fmt_f64(*t));
        for v in stats.mean()[i].iter() {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push(',');
        out.push_str(&fmt_f64(stats.second_moment()[i]));
        out.push(',');
        out.push_str(&fmt_f64(stats.stderr()[i]));
        out.push('\n');
    }
    out
}

/// Reads an ensemble CSV; path count and seed are not part of the schema
/// and must be supplied by the caller (they live in the run summary).
pub fn ensemble_from_csv(text: &str, path_count: usize, seed: u64) -> Result<EnsembleStats> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Schema("empty ensemble CSV".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"t")
        || cols.len() < 4
        || cols[cols.len() - 2] != "second_moment"
        || cols[cols.len() - 1] != "stderr"
    {
        return Err(Error::Schema(
            "ensemble CSV header must be t,mean_1,...,second_moment,stderr".into(),
        ));
    }
    let dim = cols.len() - 3;
    let mut times = Vec::new();
    let mut mean = Vec::new();
    let mut second = Vec::new();
    let mut stderr = Vec::new();
    for (row, line) in lines.enumerate() {
        let values = parse_row(line, dim + 3, row)?;
        times.push(values[0]);
        mean.push(DVector::from_vec(values[1..1 + dim].to_vec()));
        second.push(values[1 + dim]);
        stderr.push(values[2 + dim]);
    }
    EnsembleStats::from_parts(times, mean, second, stderr, path_count, seed)
}

fn parse_row(line: &str, expected: usize, row: usize) -> Result<Vec<f64>> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != expected {
        return Err(Error::Schema(format!(
            "row {row}: expected {expected} fields, found {}",
            fields.len()
        )));
    }
    fields
        .iter()
        .map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|_| Error::Schema(format!("row {row}: bad float `{f}`")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate_flow, IntegrateOptions};
    use crate::model::QuadraticSaddle;

    #[test]
    fn trajectory_round_trips_bit_exact() {
        let p = QuadraticSaddle::bilinear_2d();
        let z0 = DVector::from_vec(vec![1.0, 0.0]);
        let traj = integrate_flow(&p, &z0, 1.0, &IntegrateOptions::sampled(1.0, 16)).unwrap();
        let text = trajectory_to_csv(&traj);
        let back = trajectory_from_csv(&text).unwrap();
        assert_eq!(traj.times(), back.times());
        for (a, b) in traj.states().iter().zip(back.states()) {
            assert_eq!(a.as_slice(), b.as_slice());
        }
    }

    #[test]
    fn rejects_malformed_rows() {
        assert!(trajectory_from_csv("t,z_1\n0.0").is_err());
        assert!(trajectory_from_csv("q,z_1\n0.0,1.0\n1.0,2.0").is_err());
        assert!(trajectory_from_csv("t,z_1\n0.0,x\n1.0,2.0").is_err());
    }

    #[test]
    fn ensemble_round_trips_bit_exact() {
        use crate::dynamics::{simulate_noisy, NoiseOptions};
        let p = QuadraticSaddle::bilinear_2d();
        let sigma = nalgebra::DMatrix::from_element(1, 1, 1.0);
        let stats = simulate_noisy(
            &p,
            &sigma,
            &sigma,
            &DVector::zeros(2),
            1.0,
            &NoiseOptions {
                dt: 0.01,
                n_paths: 16,
                seed: 5,
                records: 10,
            },
        )
        .unwrap();
        let text = ensemble_to_csv(&stats);
        let back = ensemble_from_csv(&text, stats.path_count(), stats.seed()).unwrap();
        assert_eq!(stats.times(), back.times());
        assert_eq!(stats.second_moment(), back.second_moment());
        assert_eq!(stats.stderr(), back.stderr());
        for (a, b) in stats.mean().iter().zip(back.mean()) {
            assert_eq!(a.as_slice(), b.as_slice());
        }
    }
}
