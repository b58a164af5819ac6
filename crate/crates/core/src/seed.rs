//! Deterministic random-stream derivation.
//!
//! Every run of a batch gets a seed `splitmix64(master ^ splitmix64(run))`.
//! Each purpose inside a run (data generation, initial particles, filter
//! noise, SMA sub-filters) is a separate ChaCha8 stream of that seed, so
//! streams never overlap and none depends on which algorithm is run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose of a random stream within one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data,
    Prior,
    Filter,
    /// Sub-filter `k` of SMA.
    SubFilter(usize),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Data => 0,
            Stream::Prior => 1,
            Stream::Filter => 2,
            Stream::SubFilter(k) => 16 + k as u64,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of run `run_index` in a batch with `master_seed`.
pub fn run_seed(master_seed: u64, run_index: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(run_index))
}

/// Random stream for one purpose of one run.
pub fn stream_rng(run_seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    rng.set_stream(stream.id());
    rng
}
