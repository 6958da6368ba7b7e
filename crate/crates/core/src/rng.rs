//! Seed derivation and the crate-wide RNG.
//!
//! A single master seed is fanned out into independent streams with
//! [`derive_seed`], so stages (and groups within a stage) can be re-run in
//! isolation without replaying everything before them. The stream cipher is
//! ChaCha8, which has a stable, documented output sequence — unlike
//! `StdRng`, it will not change between `rand` releases.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derive an independent stream seed from `(master, stream)`.
///
/// This is two rounds of the SplitMix64 finalizer: the master seed is mixed
/// once, xored with the stream index, and mixed again. The construction is
/// fixed and documented so that externally re-running a single stage with
/// its derived seed reproduces the in-pipeline results byte for byte.
#[must_use]
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(master) ^ stream)
}

/// A ChaCha8 RNG positioned at the start of stream `(master, stream)`.
#[must_use]
pub fn stream_rng(master: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream))
}

/// SplitMix64 finalizer (Steele, Lea & Flood 2014).
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Standard normal draw via Box–Muller.
///
/// Two uniform draws per call; uses `libm` so the result is identical on
/// every platform for a given RNG state.
pub fn standard_normal<R: rand::Rng>(rng: &mut R) -> f64 {
    // Guard the log: random::<f64>() is in [0, 1), so flip to (0, 1].
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

/// Gumbel(0, 1) draw via inverse CDF: `-ln(-ln(u))`.
pub fn standard_gumbel<R: rand::Rng>(rng: &mut R) -> f64 {
    let u: f64 = 1.0 - rng.random::<f64>();
    -libm::log(-libm::log(u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derive_seed_is_deterministic_and_stream_separated() {
        assert_eq!(derive_seed(42, 0), derive_seed(42, 0));
        assert_ne!(derive_seed(42, 0), derive_seed(42, 1));
        assert_ne!(derive_seed(42, 0), derive_seed(43, 0));
    }

    #[test]
    fn stream_rng_reproduces_sequences() {
        let a: Vec<f64> = (0..8).map(|_| stream_rng(7, 3).random()).collect();
        let b: Vec<f64> = (0..8).map(|_| stream_rng(7, 3).random()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn normal_moments_are_sane() {
        let mut rng = stream_rng(1, 0);
        let n = 200_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let x = standard_normal(&mut rng);
            sum += x;
            sq += x * x;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn gumbel_mean_matches_euler_constant() {
        let mut rng = stream_rng(2, 0);
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| standard_gumbel(&mut rng)).sum::<f64>() / n as f64;
        // Euler–Mascheroni constant.
        assert!((mean - 0.577_215_664_9).abs() < 0.01, "mean {mean}");
    }
}
