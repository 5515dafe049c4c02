//! Deterministic seed derivation.
//!
//! Every source of randomness in the pipeline is a ChaCha8 stream whose seed
//! is derived from the user seed, a purpose tag, and an index. Parallel code
//! assigns one stream per fixed-size chunk, so results do not depend on the
//! number of worker threads.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seed-space tags for the independent random streams.
#[derive(Debug, Clone, Copy)]
pub enum Purpose {
    SurfaceSampling,
    ModelInit,
    TrainingNoise,
    EpochData,
    InitialNoise,
    VfDataset,
    Eval,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::SurfaceSampling => 0x5351,
            Purpose::ModelInit => 0x4D49,
            Purpose::TrainingNoise => 0x544E,
            Purpose::EpochData => 0x4544,
            Purpose::InitialNoise => 0x494E,
            Purpose::VfDataset => 0x5644,
            Purpose::Eval => 0x4556,
        }
    }
}

/// splitmix64 finalizer; decorrelates nearby inputs.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Derive a child seed from (user seed, purpose, index).
pub fn derive(seed: u64, purpose: Purpose, index: u64) -> u64 {
    mix(mix(seed ^ purpose.tag().wrapping_mul(0x100000001B3)) ^ index)
}

/// RNG for a derived seed.
pub fn rng(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, purpose, index))
}

/// RNG for chunk `chunk` of a larger job, independent across chunks.
pub fn chunk_rng(seed: u64, purpose: Purpose, index: u64, chunk: u64) -> ChaCha8Rng {
    let mut r = rng(seed, purpose, index);
    r.set_stream(chunk);
    r
}
