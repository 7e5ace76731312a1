//! Dense matrix exponential by scaling and squaring with Padé approximants,
//! following Higham's degree-(3,5,7,9,13) selection rule.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const THETA_3: f64 = 1.495585217958292e-2;
const THETA_5: f64 = 2.53939833006323e-1;
const THETA_7: f64 = 9.504178996162932e-1;
const THETA_9: f64 = 2.097847961257068;
const THETA_13: f64 = 5.371920351148152;

fn one_norm(a: &DMatrix<f64>) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Solves `(-u + v) r = (u + v)` for the Padé quotient.
fn pade_solve(u: DMatrix<f64>, v: DMatrix<f64>) -> DMatrix<f64> {
    let numer = &u + &v;
    let denom = v - u;
    denom
        .full_piv_lu()
        .solve(&numer)
        .expect("Pade denominator is singular; input matrix likely non-finite")
}

fn pade_3(a: &DMatrix<f64>, a2: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let b = [120.0, 60.0, 12.0, 1.0];
    let u = a * (a2 * b[3] + &id * b[1]);
    let v = a2 * b[2] + id * b[0];
    (u, v)
}

fn pade_5(a: &DMatrix<f64>, a2: &DMatrix<f64>, a4: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let b = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
    let u = a * (a4 * b[5] + a2 * b[3] + &id * b[1]);
    let v = a4 * b[4] + a2 * b[2] + id * b[0];
    (u, v)
}

fn pade_7(
    a: &DMatrix<f64>,
    a2: &DMatrix<f64>,
    a4: &DMatrix<f64>,
    a6: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let b = [
        17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
    ];
    let u = a * (a6 * b[7] + a4 * b[5] + a2 * b[3] + &id * b[1]);
    let v = a6 * b[6] + a4 * b[4] + a2 * b[2] + id * b[0];
    (u, v)
}

fn pade_9(
    a: &DMatrix<f64>,
    a2: &DMatrix<f64>,
    a4: &DMatrix<f64>,
    a6: &DMatrix<f64>,
    a8: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let b = [
        17643225600.0,
        8821612800.0,
        2075673600.0,
        302702400.0,
        30270240.0,
        2162160.0,
        110880.0,
        3960.0,
        90.0,
        1.0,
    ];
    let u = a * (a8 * b[9] + a6 * b[7] + a4 * b[5] + a2 * b[3] + &id * b[1]);
    let v = a8 * b[8] + a6 * b[6] + a4 * b[4] + a2 * b[2] + id * b[0];
    (u, v)
}

fn pade_13(
    a: &DMatrix<f64>,
    a2: &DMatrix<f64>,
    a4: &DMatrix<f64>,
    a6: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let b = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    let w = a6 * b[13] + a4 * b[11] + a2 * b[9];
    let u = a * (a6 * &w + a6 * b[7] + a4 * b[5] + a2 * b[3] + &id * b[1]);
    let w2 = a6 * b[12] + a4 * b[10] + a2 * b[8];
    let v = a6 * w2 + a6 * b[6] + a4 * b[4] + a2 * b[2] + id * b[0];
    (u, v)
}

/// `exp(a)` for a square matrix.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::input("matrix exponential of a non-square matrix"));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::input("matrix exponential of non-finite matrix"));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let norm = one_norm(a);
    let a2 = a * a;
    if norm <= THETA_3 {
        let (u, v) = pade_3(a, &a2);
        return Ok(pade_solve(u, v));
    }
    let a4 = &a2 * &a2;
    if norm <= THETA_5 {
        let (u, v) = pade_5(a, &a2, &a4);
        return Ok(pade_solve(u, v));
    }
    let a6 = &a4 * &a2;
    if norm <= THETA_7 {
        let (u, v) = pade_7(a, &a2, &a4, &a6);
        return Ok(pade_solve(u, v));
    }
    if norm <= THETA_9 {
        let a8 = &a4 * &a4;
        let (u, v) = pade_9(a, &a2, &a4, &a6, &a8);
        return Ok(pade_solve(u, v));
    }
    // Scale down below theta_13, apply the (13,13) approximant, square back.
    let s = ((norm / THETA_13).log2().ceil()).max(0.0) as u32;
    let scale = 0.5_f64.powi(s as i32);
    let a_s = a * scale;
    let a2s = &a_s * &a_s;
    let a4s = &a2s * &a2s;
    let a6s = &a4s * &a2s;
    let (u, v) = pade_13(&a_s, &a2s, &a4s, &a6s);
    let mut r = pade_solve(u, v);
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

/// `exp(t a) v` without exposing the full exponential to the caller.
///
/// For skew-symmetric `a` the result preserves the Euclidean norm of `v`
/// up to roundoff accumulated by the squaring stage.
pub fn matexp_action(a: &DMatrix<f64>, t: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != v.len() {
        return Err(Error::input(format!(
            "matrix is {}x{} but vector has length {}",
            a.nrows(),
            a.ncols(),
            v.len()
        )));
    }
    if !t.is_finite() {
        return Err(Error::input("non-finite time in matexp_action"));
    }
    Ok(expm(&(a * t))? * v)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: scaled Taylor series with squaring.
    fn expm_taylor(a: &DMatrix<f64>) -> DMatrix<f64> {
        let n = a.nrows();
        let norm = one_norm(a);
        let s = if norm > 0.25 {
            (norm / 0.25).log2().ceil() as u32
        } else {
            0
        };
        let a_s = a * 0.5_f64.powi(s as i32);
        let mut term = DMatrix::<f64>::identity(n, n);
        let mut sum = DMatrix::<f64>::identity(n, n);
        for k in 1..=30 {
            term = &term * &a_s / k as f64;
            sum += &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }

    fn rotation_generator() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])
    }

    #[test]
    fn exp_of_zero_is_identity_action() {
        let a = DMatrix::<f64>::zeros(3, 3);
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let w = matexp_action(&a, 7.3, &v).unwrap();
        assert!((w - v).norm() < 1e-15);
    }

    #[test]
    fn quarter_turn_rotation() {
        let a = rotation_generator();
        let v = DVector::from_vec(vec![1.0, 0.0]);
        let w = matexp_action(&a, std::f64::consts::FRAC_PI_2, &v).unwrap();
        // e^{tA} = [[cos t, sin t], [-sin t, cos t]]
        assert!((w - DVector::from_vec(vec![0.0, -1.0])).norm() < 1e-14);
    }

    #[test]
    fn full_turn_returns_home() {
        let a = rotation_generator();
        let v = DVector::from_vec(vec![0.3, -1.2]);
        let w = matexp_action(&a, 2.0 * std::f64::consts::PI, &v).unwrap();
        assert!((w - v).norm() < 1e-13);
    }

    #[test]
    fn skew_symmetric_preserves_norm() {
        let mut rng = crate::rng::CounterRng::from_seed(42);
        for _ in 0..5 {
            let mut m = DMatrix::<f64>::zeros(6, 6);
            for i in 0..6 {
                for j in (i + 1)..6 {
                    let x = 2.0 * rng.next_f64() - 1.0;
                    m[(i, j)] = x;
                    m[(j, i)] = -x;
                }
            }
            let v = DVector::from_fn(6, |_, _| 2.0 * rng.next_f64() - 1.0);
            let w = matexp_action(&m, 3.0, &v).unwrap();
            assert!((w.norm() - v.norm()).abs() < 1e-9 * (1.0 + 3.0));
        }
    }

    #[test]
    fn agrees_with_taylor_oracle_across_scales() {
        let mut rng = crate::rng::CounterRng::from_seed(7);
        for &scale in &[1e-3, 0.1, 1.0, 3.0, 20.0] {
            let a = DMatrix::from_fn(4, 4, |_, _| scale * (2.0 * rng.next_f64() - 1.0));
            let e1 = expm(&a).unwrap();
            let e2 = expm_taylor(&a);
            let rel = one_norm(&(&e1 - &e2)) / one_norm(&e2).max(1.0);
            assert!(rel < 1e-12, "scale {scale}: relative error {rel}");
        }
    }

    #[test]
    fn rejects_non_square_and_non_finite() {
        assert!(expm(&DMatrix::<f64>::zeros(2, 3)).is_err());
        let mut a = DMatrix::<f64>::zeros(2, 2);
        a[(0, 0)] = f64::INFINITY;
        assert!(expm(&a).is_err());
    }
}
