//! Deterministic random number generation.
//!
//! Everything random in this crate flows through a ChaCha8 stream so that
//! a seed fully determines datasets, initial parameters and training
//! trajectories, independent of platform.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::math;

/// The single RNG type used across the crate.
pub type DetRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> DetRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent stream for a sub-task (epoch, clip, probe, ...)
/// so that consumers cannot perturb each other's draws.
pub fn derive(seed: u64, stream: u64) -> DetRng {
    // splitmix64 step keeps derived seeds well separated.
    let mut z = seed
        .wrapping_add(0x9e3779b97f4a7c15)
        .wrapping_add(stream.wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    rng_from_seed(z ^ (z >> 31))
}

/// Standard normal draw via Box-Muller; two uniforms per call keeps the
/// stream layout independent of any library's ziggurat tables.
pub fn standard_normal(rng: &mut DetRng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    math::sqrt(-2.0 * math::ln(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}
