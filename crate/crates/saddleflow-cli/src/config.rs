//! Scenario configuration: one JSON file describing the problem plus
//! command-specific blocks. The config is the unit of reproducibility;
//! command-line flags may only override scalars.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use saddleflow::error::{Error, Result};
use saddleflow::model::schema::{parse_problem_json, ParsedProblem};
use saddleflow::model::GainVector;
use saddleflow::subspace::{AffineSubspace, Subspace};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Inline problem object or `{"file": "problem.json"}`. Optional only
    /// for `verify`, which runs on generated instances.
    #[serde(default)]
    pub problem: Option<serde_json::Value>,
    #[serde(default)]
    pub simulate: Option<SimulateBlock>,
    #[serde(default)]
    pub noise: Option<NoiseBlock>,
    #[serde(default)]
    pub certify: Option<CertifyBlock>,
    #[serde(default)]
    pub verify: Option<VerifyBlock>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    pub z0: Vec<f64>,
    pub t: f64,
    #[serde(default)]
    pub rel_tol: Option<f64>,
    #[serde(default)]
    pub abs_tol: Option<f64>,
    #[serde(default)]
    pub max_step: Option<f64>,
    /// Number of uniform output samples (default 400).
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub gains: Option<GainsBlock>,
    #[serde(default)]
    pub subspace: Option<SubspaceBlock>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsBlock {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubspaceBlock {
    pub base: Vec<f64>,
    /// Direction vectors spanning the subspace (rows).
    pub directions: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseBlock {
    pub sigma_x: Vec<Vec<f64>>,
    pub sigma_y: Vec<Vec<f64>>,
    pub z0: Vec<f64>,
    pub t: f64,
    pub dt: f64,
    pub paths: usize,
    pub seed: u64,
    #[serde(default)]
    pub records: Option<usize>,
    /// Slope-fit window; defaults to the second half of the horizon.
    #[serde(default)]
    pub window: Option<(f64, f64)>,
    #[serde(default)]
    pub expected_slope: Option<f64>,
    #[serde(default)]
    pub slope_rel_tol: Option<f64>,
    /// Re-run at dt/2 and require slope agreement within combined stderr.
    #[serde(default)]
    pub dt_check: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyBlock {
    pub guess: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyBlock {
    #[serde(default)]
    pub suites: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub instances: Option<usize>,
    #[serde(default)]
    pub max_dim: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemRef {
    file: PathBuf,
}

/// Loads a scenario config and resolves the problem (inline or by file
/// reference, relative to the config's directory).
pub fn load_scenario(path: &Path) -> Result<(ScenarioConfig, Option<ParsedProblem>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Schema(format!("cannot read config {}: {e}", path.display())))?;
    let config: ScenarioConfig =
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("config file: {e}")))?;
    let problem = match &config.problem {
        Some(value) => {
            let parsed = resolve_problem(value, path.parent().unwrap_or(Path::new(".")))?;
            validate_dims(&config, &parsed)?;
            Some(parsed)
        }
        None => None,
    };
    Ok((config, problem))
}

fn resolve_problem(value: &serde_json::Value, base_dir: &Path) -> Result<ParsedProblem> {
    if value.get("file").is_some() {
        let reference: ProblemRef = serde_json::from_value(value.clone())
            .map_err(|e| Error::Schema(format!("problem reference: {e}")))?;
        let full = base_dir.join(&reference.file);
        let text = std::fs::read_to_string(&full).map_err(|e| {
            Error::Schema(format!("cannot read problem file {}: {e}", full.display()))
        })?;
        parse_problem_json(&text)
    } else {
        parse_problem_json(&value.to_string())
    }
}

fn validate_dims(config: &ScenarioConfig, problem: &ParsedProblem) -> Result<()> {
    let dim = problem.dim();
    let p = problem.problem.as_dyn();
    if let Some(sim) = &config.simulate {
        if sim.z0.len() != dim {
            return Err(Error::Schema(format!(
                "simulate.z0 has length {}, problem dimension is {dim}",
                sim.z0.len()
            )));
        }
        if let Some(g) = &sim.gains {
            if g.x.len() != p.primal_dim() || g.y.len() != p.dual_dim() {
                return Err(Error::Schema(
                    "simulate.gains dimensions do not match the problem".into(),
                ));
            }
        }
        if let Some(s) = &sim.subspace {
            if s.base.len() != dim || s.directions.iter().any(|d| d.len() != dim) {
                return Err(Error::Schema(
                    "simulate.subspace vectors must match the problem dimension".into(),
                ));
            }
        }
    }
    if let Some(noise) = &config.noise {
        if noise.z0.len() != dim {
            return Err(Error::Schema(format!(
                "noise.z0 has length {}, problem dimension is {dim}",
                noise.z0.len()
            )));
        }
        if noise.sigma_x.len() != p.primal_dim() || noise.sigma_y.len() != p.dual_dim() {
            return Err(Error::Schema(
                "noise.sigma_x/sigma_y must match the problem block dimensions".into(),
            ));
        }
    }
    if let Some(cert) = &config.certify {
        if cert.guess.len() != dim {
            return Err(Error::Schema(format!(
                "certify.guess has length {}, problem dimension is {dim}",
                cert.guess.len()
            )));
        }
    }
    Ok(())
}

pub fn to_vector(v: &[f64]) -> DVector<f64> {
    DVector::from_vec(v.to_vec())
}

pub fn to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::Schema(format!("`{what}` must be a nonempty matrix")));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Schema(format!(
            "`{what}` rows have inconsistent lengths"
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

pub fn gains_from_block(block: &GainsBlock) -> Result<GainVector> {
    GainVector::new(
        DVector::from_vec(block.x.clone()),
        DVector::from_vec(block.y.clone()),
    )
    .map_err(|e| Error::Schema(format!("simulate.gains: {e}")))
}

pub fn subspace_from_block(block: &SubspaceBlock) -> Result<AffineSubspace> {
    let dim = block.base.len();
    let mut cols = DMatrix::<f64>::zeros(dim, block.directions.len());
    for (j, d) in block.directions.iter().enumerate() {
        cols.set_column(j, &DVector::from_vec(d.clone()));
    }
    let dirs = Subspace::from_spanning(&cols)
        .map_err(|e| Error::Schema(format!("simulate.subspace: {e}")))?;
    AffineSubspace::new(to_vector(&block.base), dirs)
        .map_err(|e| Error::Schema(format!("simulate.subspace: {e}")))
}
