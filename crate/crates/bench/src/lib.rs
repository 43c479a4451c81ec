//! Shared helpers for the benchmarks.

use rng_sentinel::prng::{Algorithm, GeneratorHandle, SeedSource};

pub const ALGORITHMS: [Algorithm; 4] =
    [Algorithm::Mt19937, Algorithm::PhiloxCounter, Algorithm::WeakLcg, Algorithm::CsprngCtr];

/// A generator ready for timing. The CSPRNG refuses fixed seeds, so it
/// takes OS entropy; the others get a constant seed.
pub fn bench_generator(algorithm: Algorithm) -> GeneratorHandle {
    match algorithm {
        Algorithm::CsprngCtr => GeneratorHandle::new(algorithm, SeedSource::OsEntropy),
        _ => GeneratorHandle::from_seed(algorithm, 0x5eed),
    }
    .expect("benchmark generator")
}
