//! Counter-based Gaussian noise and dyadic Brownian-bridge refinement.
//!
//! Normal number `k` of stream `s` under seed `σ` is a pure function of
//! `(σ, s, k)`: ChaCha8 keyed by the seed, stream `s`, positioned at word
//! `4k`, two `u64` draws fed through Box–Muller (cosine branch only). Results
//! therefore never depend on thread scheduling.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Fills `out` with normals `counter_start, counter_start + 1, …` of `stream`.
pub fn normals(seed: u64, stream: u64, counter_start: u64, out: &mut [f64]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(counter_start) * 4);
    for z in out.iter_mut() {
        // (0, 1] keeps the logarithm finite.
        let u1 = ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        *z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
    }
}

/// Brownian increments over `n_steps` equal steps of `[0, horizon]`.
///
/// With `n_steps = n0·2^m` (`n0` odd), the `n0` coarsest increments are drawn
/// first and then halved `m` times by the Brownian bridge; refinement `j`
/// uses counters `n0·2^{j−1} .. n0·2^j`. Two sources on the same horizon
/// whose step counts differ by a power of two therefore produce increments
/// whose coarse sums agree exactly.
#[derive(Debug, Clone, Copy)]
pub struct BrownianSource {
    seed: u64,
    horizon: f64,
    n0: usize,
    levels: u32,
}

impl BrownianSource {
    pub fn new(seed: u64, horizon: f64, n_steps: usize) -> Self {
        assert!(n_steps > 0, "at least one step");
        let levels = n_steps.trailing_zeros();
        BrownianSource {
            seed,
            horizon,
            n0: n_steps >> levels,
            levels,
        }
    }

    pub fn n_steps(&self) -> usize {
        self.n0 << self.levels
    }

    /// Increments for `path`; `out.len()` must equal `n_steps()`.
    pub fn fill(&self, path: u64, out: &mut [f64]) {
        assert_eq!(out.len(), self.n_steps());
        let mut len = self.n0;
        let mut h = self.horizon / self.n0 as f64;
        normals(self.seed, path, 0, &mut out[..len]);
        let sd = h.sqrt();
        out[..len].iter_mut().for_each(|z| *z *= sd);

        let mut z = vec![0.0; len << self.levels.saturating_sub(1)];
        for _ in 0..self.levels {
            normals(self.seed, path, len as u64, &mut z[..len]);
            let bridge_sd = (0.25 * h).sqrt();
            // Refine in place from the back so coarse values are read before overwritten.
            for k in (0..len).rev() {
                let d = out[k];
                let first = 0.5 * d + bridge_sd * z[k];
                out[2 * k] = first;
                out[2 * k + 1] = d - first;
            }
            len *= 2;
            h *= 0.5;
        }
    }
}

/// SplitMix64 finaliser, used to derive independent seeds.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counters_are_random_access() {
        let mut all = vec![0.0; 10];
        normals(7, 3, 0, &mut all);
        let mut tail = vec![0.0; 4];
        normals(7, 3, 6, &mut tail);
        assert_eq!(&all[6..], &tail[..]);
    }

    #[test]
    fn streams_differ() {
        let mut a = [0.0; 4];
        let mut b = [0.0; 4];
        normals(7, 0, 0, &mut a);
        normals(7, 1, 0, &mut b);
        assert_ne!(a, b);
    }

    #[test]
    fn refinement_preserves_coarse_sums() {
        let coarse = BrownianSource::new(5, 1.0, 3);
        let fine = BrownianSource::new(5, 1.0, 24);
        let mut c = vec![0.0; 3];
        let mut f = vec![0.0; 24];
        coarse.fill(9, &mut c);
        fine.fill(9, &mut f);
        for k in 0..3 {
            let s: f64 = f[8 * k..8 * (k + 1)].iter().sum();
            assert!((s - c[k]).abs() < 1e-14, "{s} vs {}", c[k]);
        }
    }

    #[test]
    fn moments_are_sane() {
        let mut z = vec![0.0; 200_000];
        normals(1, 0, 0, &mut z);
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 4.0 / n.sqrt());
        assert!((var - 1.0).abs() < 0.02);
    }
}
