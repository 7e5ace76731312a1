//! Euler–Maruyama simulation of the noise-perturbed flow
//! `dz = F(z) dt + diag(Σ^x, Σ^y) dB`.
//!
//! Paths are grouped into fixed blocks of consecutive indices; blocks may
//! run concurrently but their partial sums are reduced in a fixed pairwise
//! tree, so the result is bit-identical for any thread layout.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::SaddleProblem;
use crate::rng::CounterRng;

const PATHS_PER_BLOCK: usize = 32;

/// Per-time-point Monte Carlo statistics for an ensemble of noisy paths.
#[derive(Debug, Clone)]
pub struct EnsembleStats {
    times: Vec<f64>,
    mean: Vec<DVector<f64>>,
    second_moment: Vec<f64>,
    stderr: Vec<f64>,
    path_count: usize,
    seed: u64,
}

impl EnsembleStats {
    fn from_sums(times: Vec<f64>, sums: BlockSums, path_count: usize, seed: u64) -> Result<Self> {
        let n = path_count as f64;
        let mean: Vec<DVector<f64>> = sums.sum_state.iter().map(|s| s / n).collect();
        let second_moment: Vec<f64> = sums.sum_sq.iter().map(|s| s / n).collect();
        let stderr: Vec<f64> = sums
            .sum_quad
            .iter()
            .zip(&second_moment)
            .map(|(q, sm)| {
                let var = (q / n - sm * sm).max(0.0);
                (var / n).sqrt()
            })
            .collect();
        for (m, sm) in mean.iter().zip(&second_moment) {
            if *sm < m.norm_squared() - 1e-9 {
                return Err(Error::eval(
                    "ensemble invariant violated: E|z|^2 < |E z|^2 beyond rounding slack",
                ));
            }
        }
        Ok(EnsembleStats {
            times,
            mean,
            second_moment,
            stderr,
            path_count,
            seed,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Per-time ensemble mean of the state.
    pub fn mean(&self) -> &[DVector<f64>] {
        &self.mean
    }

    /// Per-time estimate of `E |z(t)|^2`.
    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }

    /// Standard error of the second-moment estimate.
    pub fn stderr(&self) -> &[f64] {
        &self.stderr
    }

    pub fn path_count(&self) -> usize {
        self.path_count
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.mean[0].len()
    }

    /// Rebuilds the struct from externally stored columns (CSV reader).
    pub fn from_parts(
        times: Vec<f64>,
        mean: Vec<DVector<f64>>,
        second_moment: Vec<f64>,
        stderr: Vec<f64>,
        path_count: usize,
        seed: u64,
    ) -> Result<Self> {
        if times.len() != mean.len()
            || times.len() != second_moment.len()
            || times.len() != stderr.len()
            || times.is_empty()
        {
            return Err(Error::input("ensemble columns have inconsistent lengths"));
        }
        if path_count == 0 {
            return Err(Error::input("path count must be at least 1"));
        }
        Ok(EnsembleStats {
            times,
            mean,
            second_moment,
            stderr,
            path_count,
            seed,
        })
    }
}

#[derive(Clone)]
struct BlockSums {
    sum_state: Vec<DVector<f64>>,
    sum_sq: Vec<f64>,
    sum_quad: Vec<f64>,
}

impl BlockSums {
    fn zeros(n_records: usize, dim: usize) -> Self {
        BlockSums {
            sum_state: vec![DVector::zeros(dim); n_records],
            sum_sq: vec![0.0; n_records],
            sum_quad: vec![0.0; n_records],
        }
    }

    fn merge(mut self, other: BlockSums) -> BlockSums {
        for (a, b) in self.sum_state.iter_mut().zip(other.sum_state) {
            *a += b;
        }
        for (a, b) in self.sum_sq.iter_mut().zip(other.sum_sq) {
            *a += b;
        }
        for (a, b) in self.sum_quad.iter_mut().zip(other.sum_quad) {
            *a += b;
        }
        self
    }
}

/// Fixed-order pairwise tree reduction; independent of how the blocks were
/// produced.
fn pairwise_reduce(mut blocks: Vec<BlockSums>) -> BlockSums {
    while blocks.len() > 1 {
        let mut next = Vec::with_capacity(blocks.len().div_ceil(2));
        let mut iter = blocks.into_iter();
        while let Some(a) = iter.next() {
            match iter.next() {
                Some(b) => next.push(a.merge(b)),
                None => next.push(a),
            }
        }
        blocks = next;
    }
    blocks.pop().expect("at least one block")
}

/// Options for [`simulate_noisy`].
#[derive(Debug, Clone)]
pub struct NoiseOptions {
    /// Euler–Maruyama step.
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Number of recorded time points after t = 0.
    pub records: usize,
}

impl Default for NoiseOptions {
    fn default() -> Self {
        NoiseOptions {
            dt: 1e-3,
            n_paths: 1000,
            seed: 0,
            records: 200,
        }
    }
}

fn validate_noise_matrix(sigma: &DMatrix<f64>, dim: usize, name: &str) -> Result<()> {
    if sigma.nrows() != dim || sigma.ncols() != dim {
        return Err(Error::input(format!(
            "{name} must be {dim}x{dim}, got {}x{}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    if sigma.iter().any(|x| !x.is_finite()) {
        return Err(Error::input(format!("{name} contains non-finite entries")));
    }
    if (sigma - sigma.transpose()).amax() > 1e-12 {
        return Err(Error::input(format!("{name} must be symmetric")));
    }
    let eig = sigma.clone().symmetric_eigen();
    let min = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        return Err(Error::input(format!(
            "{name} must be positive definite (min eigenvalue {min:.3e})"
        )));
    }
    Ok(())
}

/// Euler–Maruyama ensemble of the noisy flow. Deterministic for a fixed
/// `(seed, n_paths)` regardless of thread count.
pub fn simulate_noisy(
    p: &dyn SaddleProblem,
    sigma_x: &DMatrix<f64>,
    sigma_y: &DMatrix<f64>,
    z0: &DVector<f64>,
    t_end: f64,
    opts: &NoiseOptions,
) -> Result<EnsembleStats> {
    let (n, m) = (p.primal_dim(), p.dual_dim());
    if z0.len() != n + m {
        return Err(Error::input("initial state dimension mismatch"));
    }
    if !opts.dt.is_finite() || opts.dt <= 0.0 {
        return Err(Error::input("dt must be positive"));
    }
    if !t_end.is_finite() || t_end <= 0.0 {
        return Err(Error::input("horizon must be positive"));
    }
    if opts.n_paths == 0 {
        return Err(Error::input("need at least one path"));
    }
    validate_noise_matrix(sigma_x, n, "sigma_x")?;
    validate_noise_matrix(sigma_y, m, "sigma_y")?;

    let steps = (t_end / opts.dt).ceil() as usize;
    let records = opts.records.clamp(1, steps);
    // Record at step indices round(i * steps / records), always including 0.
    let record_steps: Vec<usize> = (0..=records)
        .map(|i| ((i * steps) as f64 / records as f64).round() as usize)
        .collect();
    let times: Vec<f64> = record_steps
        .iter()
        .map(|&k| (k as f64 * opts.dt).min(t_end))
        .collect();

    let dim = n + m;
    let sqrt_dt = opts.dt.sqrt();
    let run_block = |block_idx: usize| -> Result<BlockSums> {
        let lo = block_idx * PATHS_PER_BLOCK;
        let hi = ((block_idx + 1) * PATHS_PER_BLOCK).min(opts.n_paths);
        let mut sums = BlockSums::zeros(times.len(), dim);
        let mut noise = DVector::<f64>::zeros(dim);
        for path in lo..hi {
            let mut rng = CounterRng::substream(opts.seed, path as u64);
            let mut z = z0.clone();
            let mut record_cursor = 0usize;
            for (ri, &rs) in record_steps.iter().enumerate() {
                if rs == 0 {
                    sums.sum_state[ri] += &z;
                    let sq = z.norm_squared();
                    sums.sum_sq[ri] += sq;
                    sums.sum_quad[ri] += sq * sq;
                    record_cursor = ri + 1;
                }
            }
            for k in 0..steps {
                let h = if k + 1 == steps {
                    // The last step absorbs any remainder of the horizon.
                    t_end - k as f64 * opts.dt
                } else {
                    opts.dt
                };
                let f = p.flow_field(&z)?;
                for i in 0..dim {
                    noise[i] = rng.next_normal();
                }
                let wiener_x = sigma_x * noise.rows(0, n).into_owned();
                let wiener_y = sigma_y * noise.rows(n, m).into_owned();
                let sqrt_h = if h == opts.dt { sqrt_dt } else { h.sqrt() };
                for i in 0..n {
                    z[i] += f[i] * h + wiener_x[i] * sqrt_h;
                }
                for j in 0..m {
                    z[n + j] += f[n + j] * h + wiener_y[j] * sqrt_h;
                }
                if z.iter().any(|x| !x.is_finite()) {
                    return Err(Error::eval(format!(
                        "path {path} became non-finite at step {k}"
                    )));
                }
                while record_cursor < record_steps.len() && record_steps[record_cursor] == k + 1 {
                    sums.sum_state[record_cursor] += &z;
                    let sq = z.norm_squared();
                    sums.sum_sq[record_cursor] += sq;
                    sums.sum_quad[record_cursor] += sq * sq;
                    record_cursor += 1;
                }
            }
        }
        Ok(sums)
    };

    let n_blocks = opts.n_paths.div_ceil(PATHS_PER_BLOCK);
    let blocks: Vec<Result<BlockSums>> = {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            (0..n_blocks).into_par_iter().map(run_block).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..n_blocks).map(run_block).collect()
        }
    };
    let blocks: Vec<BlockSums> = blocks.into_iter().collect::<Result<_>>()?;
    let total = pairwise_reduce(blocks);

    EnsembleStats::from_sums(times, total, opts.n_paths, opts.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::QuadraticSaddle;

    fn id1() -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 1.0)
    }

    #[test]
    fn vanishing_noise_matches_deterministic_flow() {
        let p = QuadraticSaddle::strict_2d();
        let z0 = DVector::from_vec(vec![1.0, 1.0]);
        let tiny = DMatrix::from_element(1, 1, 1e-8);
        // dt small enough that the O(dt) scheme bias sits below the 1e-4
        // comparison tolerance.
        let stats = simulate_noisy(
            &p,
            &tiny,
            &tiny,
            &z0,
            2.0,
            &NoiseOptions {
                dt: 1e-4,
                n_paths: 4,
                seed: 1,
                records: 20,
            },
        )
        .unwrap();
        for (t, mean) in stats.times().iter().zip(stats.mean()) {
            let expected = DVector::from_vec(vec![(-t).exp(), (-t).exp()]);
            assert!(
                (mean - &expected).norm() < 1e-4,
                "t = {t}: mean {mean:?} vs {expected:?}"
            );
        }
    }

    #[test]
    fn bilinear_second_moment_grows_linearly() {
        // Quick version of the variance-growth experiment: the generator is
        // norm-preserving, so E|z|^2 = |z0|^2 + 2 t exactly.
        let p = QuadraticSaddle::bilinear_2d();
        let z0 = DVector::zeros(2);
        let stats = simulate_noisy(
            &p,
            &id1(),
            &id1(),
            &z0,
            2.0,
            &NoiseOptions {
                dt: 1e-3,
                n_paths: 2000,
                seed: 42,
                records: 20,
            },
        )
        .unwrap();
        let last = *stats.second_moment().last().unwrap();
        assert!((last - 4.0).abs() < 0.4, "E|z(2)|^2 = {last}");
    }

    #[test]
    fn fixed_seed_is_bit_reproducible() {
        let p = QuadraticSaddle::bilinear_2d();
        let z0 = DVector::from_vec(vec![1.0, 0.0]);
        let opts = NoiseOptions {
            dt: 1e-2,
            n_paths: 37,
            seed: 7,
            records: 10,
        };
        let a = simulate_noisy(&p, &id1(), &id1(), &z0, 1.0, &opts).unwrap();
        let b = simulate_noisy(&p, &id1(), &id1(), &z0, 1.0, &opts).unwrap();
        assert_eq!(a.second_moment(), b.second_moment());
        for (ma, mb) in a.mean().iter().zip(b.mean()) {
            assert_eq!(ma.as_slice(), mb.as_slice());
        }
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn thread_count_does_not_change_bits() {
        let p = QuadraticSaddle::bilinear_2d();
        let z0 = DVector::from_vec(vec![1.0, 0.0]);
        let opts = NoiseOptions {
            dt: 1e-2,
            n_paths: 101,
            seed: 9,
            records: 7,
        };
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| simulate_noisy(&p, &id1(), &id1(), &z0, 1.0, &opts))
            .unwrap();
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(8)
            .build()
            .unwrap()
            .install(|| simulate_noisy(&p, &id1(), &id1(), &z0, 1.0, &opts))
            .unwrap();
        assert_eq!(single.second_moment(), many.second_moment());
        assert_eq!(single.stderr(), many.stderr());
    }

    #[test]
    fn rejects_indefinite_sigma() {
        let p = QuadraticSaddle::bilinear_2d();
        let z0 = DVector::zeros(2);
        let bad = DMatrix::from_element(1, 1, -1.0);
        assert!(simulate_noisy(&p, &bad, &id1(), &z0, 1.0, &NoiseOptions::default()).is_err());
    }

    #[test]
    fn jensen_holds_at_every_time() {
        let p = QuadraticSaddle::strict_2d();
        let z0 = DVector::from_vec(vec![0.5, -0.5]);
        let stats = simulate_noisy(
            &p,
            &id1(),
            &id1(),
            &z0,
            1.0,
            &NoiseOptions {
                dt: 1e-2,
                n_paths: 64,
                seed: 3,
                records: 10,
            },
        )
        .unwrap();
        for (m, sm) in stats.mean().iter().zip(stats.second_moment()) {
            assert!(*sm >= m.norm_squared() - 1e-9);
        }
    }
}
