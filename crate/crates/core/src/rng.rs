use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SlrRng = ChaCha8Rng;

/// Stream reserved for drawing the task directions (k*, v*).
pub const TASK_STREAM: u64 = u64::MAX;

/// Independent generator for `(seed, stream)`. ChaCha streams do not overlap,
/// so repetitions, Monte Carlo blocks and workers each get their own.
pub fn stream(seed: u64, stream: u64) -> SlrRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derive a seed for a sub-experiment so that distinct purposes sharing one
/// user seed do not reuse streams.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
