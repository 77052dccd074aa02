//! Project-wide random number generation.
//!
//! Every stochastic routine draws from [`Rng`], a ChaCha8 generator. A
//! master seed is expanded with `seed_from_u64` and independent substreams
//! are selected with ChaCha's 64-bit stream id, derived from a path of
//! integers (for example `[replication, method, chain]`) folded through
//! SplitMix64. Results therefore depend only on the seed and the path, never
//! on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream id for a substream path.
pub fn stream_id(path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(path.len() as u64), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

/// Generator for `seed`, positioned on the substream named by `path`.
pub fn substream(seed: u64, path: &[u64]) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(path));
    rng
}

/// Generator for `seed` on the default stream.
pub fn from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives a child seed, for APIs that take a plain `u64` seed.
pub fn child_seed(seed: u64, path: &[u64]) -> u64 {
    splitmix64(seed ^ stream_id(path).rotate_left(17))
}
