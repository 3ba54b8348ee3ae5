//! Named random sub-streams derived from one user seed, so that sampling,
//! initialization and dropout stay reproducible independently of each other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Sampling = 1,
    Init = 2,
    Dropout = 3,
    Synthetic = 4,
    Evaluation = 5,
    Validation = 6,
}

/// Generator for `(seed, stream, index)`; distinct triples give unrelated
/// sequences.
pub fn stream(seed: u64, stream: Stream, index: u64) -> Rng {
    let mut h = splitmix(seed ^ 0x5041_525f_5345_4544);
    h = splitmix(h ^ (stream as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    h = splitmix(h ^ index.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    ChaCha8Rng::seed_from_u64(h)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
