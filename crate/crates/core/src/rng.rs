//! Seeded random streams.
//!
//! Every generator in the crate draws from a ChaCha8 stream. Bulk work is
//! split into independent substreams by the ChaCha stream id, so sample `i`
//! of a run only depends on `(seed, i)` and can be produced in any order.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Identifier written into dataset headers and manifests.
pub const RNG_ALGORITHM: &str = "chacha8-stream";

pub type SimRng = ChaCha8Rng;

/// Independent stream `index` under `seed`.
pub fn substream(seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Separates seeds used for different purposes (dataset, training,
/// evaluation) so that a single user-facing seed never reuses a stream.
pub fn domain_seed(seed: u64, domain: Domain) -> u64 {
    // splitmix64 finalizer over the xor so nearby seeds diverge
    let mut z = seed ^ (domain as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Training = 1,
    EvalChannel = 2,
    EvalCsiError = 3,
    EvalBpso = 4,
}

/// Circularly-symmetric complex Gaussian with unit variance, CN(0, 1).
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}
