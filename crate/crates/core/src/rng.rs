//! Portable random streams.
//!
//! Every random decision in the engine draws from [`SessionRng`] (ChaCha with
//! 8 rounds), whose output sequence is fixed by its seed on every platform.
//! Uniform reals are produced from the top 53 bits of one `u64` draw, so a
//! single categorical sample always consumes exactly one word of the stream.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The generator owned by one generation session or Monte Carlo replicate.
pub type SessionRng = ChaCha8Rng;

pub fn session_rng(seed: u64) -> SessionRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform draw in `[0, 1)`: `(next_u64 >> 11) * 2^-53`.
pub fn uniform_f64<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    (rng.next_u64() >> 11) as f64 * SCALE
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable seed derivation: folds `parts` into `base` with the SplitMix64
/// finalizer. Independent of platform, word size and crate versions.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}
