//! Counter-based random numbers for reproducible (parallel) Monte Carlo.
//!
//! Each generator is a pure function of `(key, counter)` built on the
//! splitmix64 finalizer, so a path's stream depends only on the master seed
//! and the path index — never on scheduling or thread layout.

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic counter-based generator (splitmix64 stream).
#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
    spare_normal: Option<f64>,
}

impl CounterRng {
    pub fn from_seed(seed: u64) -> Self {
        CounterRng {
            key: mix64(seed ^ GOLDEN_GAMMA),
            counter: 0,
            spare_normal: None,
        }
    }

    /// Independent substream `index` of the master seed; used for per-path
    /// noise in Monte Carlo runs.
    pub fn substream(seed: u64, index: u64) -> Self {
        let key = mix64(
            mix64(seed ^ GOLDEN_GAMMA) ^ index.wrapping_mul(GOLDEN_GAMMA) ^ 0x5851_f42d_4c95_7f2d,
        );
        CounterRng {
            key,
            counter: 0,
            spare_normal: None,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(
            self.key
                .wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)),
        )
    }

    /// Uniform in `[0, 1)` with 53-bit resolution.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
    }

    /// Standard normal via Box–Muller (the spare sample is cached).
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // Guard u1 away from zero so ln stays finite.
        let u1 = (self.next_u64() >> 11).max(1) as f64 * (1.0 / 9007199254740992.0);
        let u2 = self.next_f64();
        let mag = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * std::f64::consts::PI * u2).sin_cos();
        self.spare_normal = Some(mag * s);
        mag * c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible() {
        let mut a = CounterRng::from_seed(123);
        let mut b = CounterRng::from_seed(123);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn substreams_differ_from_each_other() {
        let mut a = CounterRng::substream(9, 0);
        let mut b = CounterRng::substream(9, 1);
        let matches = (0..64).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(matches, 0);
    }

    #[test]
    fn uniform_moments_are_sane() {
        let mut rng = CounterRng::from_seed(2024);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let x = rng.next_f64();
            assert!((0.0..1.0).contains(&x));
            sum += x;
            sum_sq += x * x;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!((mean - 0.5).abs() < 5e-3);
        assert!((var - 1.0 / 12.0).abs() < 5e-3);
    }

    #[test]
    fn normal_moments_are_sane() {
        let mut rng = CounterRng::from_seed(7);
        let n = 200_000;
        let (mut s1, mut s2, mut s4) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let x = rng.next_normal();
            s1 += x;
            s2 += x * x;
            s4 += x * x * x * x;
        }
        assert!((s1 / n as f64).abs() < 0.01);
        assert!((s2 / n as f64 - 1.0).abs() < 0.02);
        assert!((s4 / n as f64 - 3.0).abs() < 0.1);
    }
}
