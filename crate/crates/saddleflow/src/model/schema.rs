//! Problem-definition files.
//!
//! JSON with a discriminating `form` field:
//!
//! ```json
//! { "form": "quadratic",
//!   "pxx": [[-1.0]], "pxy": [[0.0]], "pyy": [[1.0]],
//!   "p": [0.0], "q": [0.0], "c": 0.0,
//!   "gains": { "x": [1.0], "y": [1.0] } }
//!
//! { "form": "lagrangian",
//!   "utility": "-0.5*x1^2",             // or [{"powers": [2], "coeff": -0.5}]
//!   "d": [[1.0, 1.0]], "e": [0.0] }
//!
//! { "form": "generic-expression",
//!   "n": 1, "m": 1, "expression": "-0.25*x^4 + x*y" }
//! ```
//!
//! Matrices are dense row-major; unknown fields are rejected with the
//! offending field named.

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::poly::{parse_polynomial, Polynomial};
use crate::model::{
    GainVector, LinearConstraintLagrangian, PolynomialSaddle, QuadraticSaddle, SaddleProblem,
    Utility,
};

pub const DEFAULT_DEGREE_CAP: u32 = 6;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemFileRaw {
    form: String,
    #[serde(default)]
    n: Option<usize>,
    #[serde(default)]
    m: Option<usize>,
    #[serde(default)]
    pxx: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pxy: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pyy: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    p: Option<Vec<f64>>,
    #[serde(default)]
    q: Option<Vec<f64>>,
    #[serde(default)]
    c: Option<f64>,
    #[serde(default)]
    utility: Option<UtilitySpec>,
    #[serde(default)]
    d: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    e: Option<Vec<f64>>,
    #[serde(default)]
    expression: Option<String>,
    #[serde(default)]
    degree_cap: Option<u32>,
    #[serde(default)]
    gains: Option<GainsSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum UtilitySpec {
    Expression(String),
    Table(Vec<TermSpec>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TermSpec {
    powers: Vec<u16>,
    coeff: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct GainsSpec {
    x: Vec<f64>,
    y: Vec<f64>,
}

/// A parsed problem retaining its concrete form.
pub enum ProblemKind {
    Quadratic(QuadraticSaddle),
    Lagrangian(LinearConstraintLagrangian),
    Polynomial(PolynomialSaddle),
}

impl ProblemKind {
    pub fn as_dyn(&self) -> &dyn SaddleProblem {
        match self {
            ProblemKind::Quadratic(p) => p,
            ProblemKind::Lagrangian(p) => p,
            ProblemKind::Polynomial(p) => p,
        }
    }

    pub fn form_name(&self) -> &'static str {
        match self {
            ProblemKind::Quadratic(_) => "quadratic",
            ProblemKind::Lagrangian(_) => "lagrangian",
            ProblemKind::Polynomial(_) => "generic-expression",
        }
    }
}

/// A problem plus the optional gains block from its file.
pub struct ParsedProblem {
    pub problem: ProblemKind,
    pub gains: Option<GainVector>,
}

impl std::fmt::Debug for ParsedProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParsedProblem")
            .field("form", &self.problem.form_name())
            .field("n", &self.problem.as_dyn().primal_dim())
            .field("m", &self.problem.as_dyn().dual_dim())
            .field("gains", &self.gains.is_some())
            .finish()
    }
}

impl ParsedProblem {
    pub fn dim(&self) -> usize {
        self.problem.as_dyn().dim()
    }
}

fn to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::Schema(format!(
            "`{what}` must have at least one row"
        )));
    }
    let ncols = rows[0].len();
    if ncols == 0 {
        return Err(Error::Schema(format!(
            "`{what}` must have at least one column"
        )));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Schema(format!(
            "`{what}` rows have inconsistent lengths"
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
    if flat.iter().any(|x| !x.is_finite()) {
        return Err(Error::Schema(format!(
            "`{what}` contains non-finite entries"
        )));
    }
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

fn require<T>(field: Option<T>, name: &str, form: &str) -> Result<T> {
    field.ok_or_else(|| Error::Schema(format!("form `{form}` requires field `{name}`")))
}

fn forbid<T>(field: &Option<T>, name: &str, form: &str) -> Result<()> {
    if field.is_some() {
        return Err(Error::Schema(format!(
            "field `{name}` is not allowed for form `{form}`"
        )));
    }
    Ok(())
}

/// Variable names for expressions: `x1..xn, y1..ym`, with `x`/`y` accepted
/// as aliases when the corresponding block is one-dimensional.
pub fn variable_names(n: usize, m: usize) -> Vec<String> {
    let mut vars: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    vars.extend((1..=m).map(|j| format!("y{j}")));
    vars
}

/// Parses over the canonical names plus `x`/`y` aliases for
/// one-dimensional blocks, folding aliases back onto their targets.
fn parse_with_aliases(src: &str, n: usize, m: usize) -> Result<Polynomial> {
    let total = n + m;
    let mut names = variable_names(n, m);
    let mut alias_of: Vec<usize> = Vec::new();
    if n == 1 {
        names.push("x".into());
        alias_of.push(0);
    }
    if m == 1 {
        names.push("y".into());
        alias_of.push(n);
    }
    let parsed = parse_polynomial(src, &names)?;
    let mut folded = Polynomial::zero(total);
    for (exps, c) in parsed.terms() {
        let mut base: Vec<u16> = exps[..total].to_vec();
        for (k, &target) in alias_of.iter().enumerate() {
            base[target] += exps[total + k];
        }
        folded = folded.add(&Polynomial::from_terms(total, &[(base, *c)])?);
    }
    Ok(folded)
}

fn utility_polynomial(spec: &UtilitySpec, n: usize, degree_cap: u32) -> Result<Polynomial> {
    let poly = match spec {
        UtilitySpec::Expression(src) => {
            // A utility is a polynomial in x only; reuse the alias logic
            // with a phantom y block and reject any y dependence.
            let with_y = parse_with_aliases(src, n, 1)?;
            let mut folded = Polynomial::zero(n);
            for (exps, c) in with_y.terms() {
                if exps[n] != 0 {
                    return Err(Error::Schema(
                        "utility expression may only use x variables".into(),
                    ));
                }
                folded = folded.add(&Polynomial::from_terms(n, &[(exps[..n].to_vec(), *c)])?);
            }
            folded
        }
        UtilitySpec::Table(terms) => {
            let converted: Vec<(Vec<u16>, f64)> =
                terms.iter().map(|t| (t.powers.clone(), t.coeff)).collect();
            Polynomial::from_terms(n, &converted)?
        }
    };
    if poly.degree() > degree_cap {
        return Err(Error::Schema(format!(
            "utility degree {} exceeds the cap {degree_cap}",
            poly.degree()
        )));
    }
    Ok(poly)
}

/// Parses and validates a problem-definition JSON document.
pub fn parse_problem_json(text: &str) -> Result<ParsedProblem> {
    let raw: ProblemFileRaw =
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("problem file: {e}")))?;
    let form = raw.form.as_str();
    let problem = match form {
        "quadratic" => {
            forbid(&raw.utility, "utility", form)?;
            forbid(&raw.d, "d", form)?;
            forbid(&raw.e, "e", form)?;
            forbid(&raw.expression, "expression", form)?;
            forbid(&raw.degree_cap, "degree_cap", form)?;
            let pxx = to_matrix(&require(raw.pxx.clone(), "pxx", form)?, "pxx")?;
            let pxy = to_matrix(&require(raw.pxy.clone(), "pxy", form)?, "pxy")?;
            let pyy = to_matrix(&require(raw.pyy.clone(), "pyy", form)?, "pyy")?;
            let n = pxx.nrows();
            let m = pyy.nrows();
            if let Some(n_decl) = raw.n {
                if n_decl != n {
                    return Err(Error::Schema(format!(
                        "`n` = {n_decl} disagrees with pxx size {n}"
                    )));
                }
            }
            if let Some(m_decl) = raw.m {
                if m_decl != m {
                    return Err(Error::Schema(format!(
                        "`m` = {m_decl} disagrees with pyy size {m}"
                    )));
                }
            }
            let p = DVector::from_vec(raw.p.clone().unwrap_or_else(|| vec![0.0; n]));
            let q = DVector::from_vec(raw.q.clone().unwrap_or_else(|| vec![0.0; m]));
            let c = raw.c.unwrap_or(0.0);
            ProblemKind::Quadratic(
                QuadraticSaddle::new(pxx, pxy, pyy, p, q, c)
                    .map_err(|e| Error::Schema(format!("quadratic problem: {e}")))?,
            )
        }
        "lagrangian" => {
            forbid(&raw.pxx, "pxx", form)?;
            forbid(&raw.pxy, "pxy", form)?;
            forbid(&raw.pyy, "pyy", form)?;
            forbid(&raw.p, "p", form)?;
            forbid(&raw.q, "q", form)?;
            forbid(&raw.expression, "expression", form)?;
            let d = to_matrix(&require(raw.d.clone(), "d", form)?, "d")?;
            let e_vec = require(raw.e.clone(), "e", form)?;
            let n = d.ncols();
            let m = d.nrows();
            if let Some(n_decl) = raw.n {
                if n_decl != n {
                    return Err(Error::Schema(format!(
                        "`n` = {n_decl} disagrees with the column count {n} of `d`"
                    )));
                }
            }
            if let Some(m_decl) = raw.m {
                if m_decl != m {
                    return Err(Error::Schema(format!(
                        "`m` = {m_decl} disagrees with the row count {m} of `d`"
                    )));
                }
            }
            let cap = raw.degree_cap.unwrap_or(DEFAULT_DEGREE_CAP);
            let u_spec = require(raw.utility.clone(), "utility", form)?;
            let poly = utility_polynomial(&u_spec, n, cap)?;
            ProblemKind::Lagrangian(
                LinearConstraintLagrangian::new(
                    Utility::Polynomial(poly),
                    d,
                    DVector::from_vec(e_vec),
                )
                .map_err(|e| Error::Schema(format!("lagrangian problem: {e}")))?,
            )
        }
        "generic-expression" => {
            forbid(&raw.pxx, "pxx", form)?;
            forbid(&raw.pxy, "pxy", form)?;
            forbid(&raw.pyy, "pyy", form)?;
            forbid(&raw.utility, "utility", form)?;
            forbid(&raw.d, "d", form)?;
            forbid(&raw.e, "e", form)?;
            let n = require(raw.n, "n", form)?;
            let m = require(raw.m, "m", form)?;
            let src = require(raw.expression.clone(), "expression", form)?;
            let poly = parse_with_aliases(&src, n, m)?;
            let cap = raw.degree_cap.unwrap_or(DEFAULT_DEGREE_CAP);
            if poly.degree() > cap {
                return Err(Error::Schema(format!(
                    "expression degree {} exceeds the cap {cap}",
                    poly.degree()
                )));
            }
            ProblemKind::Polynomial(
                PolynomialSaddle::new(n, m, poly)
                    .map_err(|e| Error::Schema(format!("generic-expression problem: {e}")))?,
            )
        }
        other => {
            return Err(Error::Schema(format!(
                "unknown form `{other}` (expected quadratic | lagrangian | generic-expression)"
            )))
        }
    };

    let dims = (problem.as_dyn().primal_dim(), problem.as_dyn().dual_dim());
    let gains = match &raw.gains {
        None => None,
        Some(g) => {
            if g.x.len() != dims.0 || g.y.len() != dims.1 {
                return Err(Error::Schema(format!(
                    "`gains` must have {} x-entries and {} y-entries",
                    dims.0, dims.1
                )));
            }
            Some(
                GainVector::new(
                    DVector::from_vec(g.x.clone()),
                    DVector::from_vec(g.y.clone()),
                )
                .map_err(|e| Error::Schema(format!("gains: {e}")))?,
            )
        }
    };

    Ok(ParsedProblem { problem, gains })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_quadratic_with_gains() {
        let text = r#"{
            "form": "quadratic",
            "pxx": [[-1.0]], "pxy": [[0.5]], "pyy": [[2.0]],
            "p": [0.1], "q": [0.0], "c": 1.0,
            "gains": {"x": [4.0], "y": [1.0]}
        }"#;
        let parsed = parse_problem_json(text).unwrap();
        assert!(matches!(parsed.problem, ProblemKind::Quadratic(_)));
        assert!(parsed.gains.is_some());
        assert_eq!(parsed.dim(), 2);
    }

    #[test]
    fn rejects_unknown_field() {
        let text = r#"{ "form": "quadratic", "pxx": [[-1.0]], "pxy": [[0.0]], "pyy": [[1.0]], "bogus": 3 }"#;
        let err = parse_problem_json(text).unwrap_err();
        assert!(err.to_string().contains("bogus"), "message: {err}");
    }

    #[test]
    fn rejects_field_from_wrong_form() {
        let text = r#"{ "form": "quadratic", "pxx": [[-1.0]], "pxy": [[0.0]], "pyy": [[1.0]], "d": [[1.0]] }"#;
        let err = parse_problem_json(text).unwrap_err();
        assert!(err.to_string().contains("`d`"), "message: {err}");
    }

    #[test]
    fn rejects_nonpositive_gain_naming_field() {
        let text = r#"{
            "form": "quadratic",
            "pxx": [[-1.0]], "pxy": [[0.0]], "pyy": [[1.0]],
            "gains": {"x": [-4.0], "y": [1.0]}
        }"#;
        let err = parse_problem_json(text).unwrap_err();
        assert!(err.to_string().contains("gains"), "message: {err}");
    }

    #[test]
    fn parses_lagrangian_expression_and_table() {
        let text = r#"{
            "form": "lagrangian",
            "utility": "-0.5*x1^2 - 0.25*x2^4",
            "d": [[1.0, 1.0]],
            "e": [-1.0]
        }"#;
        let parsed = parse_problem_json(text).unwrap();
        assert_eq!(parsed.dim(), 3);

        let text = r#"{
            "form": "lagrangian",
            "utility": [{"powers": [2, 0], "coeff": -0.5}],
            "d": [[1.0, 2.0]],
            "e": [0.0]
        }"#;
        let parsed = parse_problem_json(text).unwrap();
        match &parsed.problem {
            ProblemKind::Lagrangian(l) => {
                assert!(l.as_quadratic().is_some());
            }
            _ => panic!("expected lagrangian"),
        }
    }

    #[test]
    fn parses_generic_expression_quartic() {
        let text = r#"{
            "form": "generic-expression",
            "n": 1, "m": 1,
            "expression": "-0.25*x^4 + x*y"
        }"#;
        let parsed = parse_problem_json(text).unwrap();
        match &parsed.problem {
            ProblemKind::Polynomial(p) => {
                assert_eq!(p.polynomial().degree(), 4);
                assert!(p.as_quadratic().is_none());
            }
            _ => panic!("expected polynomial"),
        }
    }

    #[test]
    fn rejects_degree_above_cap() {
        let text = r#"{
            "form": "generic-expression",
            "n": 1, "m": 1,
            "expression": "-1.0*x^8 + x*y"
        }"#;
        assert!(parse_problem_json(text).is_err());
    }

    #[test]
    fn rejects_concavity_violation() {
        let text = r#"{ "form": "quadratic", "pxx": [[1.0]], "pxy": [[0.0]], "pyy": [[1.0]] }"#;
        let err = parse_problem_json(text).unwrap_err();
        assert!(err.to_string().contains("negative semidefinite"));
    }
}
