//! Small shared utilities: deterministic RNG derivation and worker pools.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent RNG streams derived from `(seed, stream, index)`.
///
/// Every random decision in the crate draws from a stream derived this way,
/// so any step (a training step, a corpus scenario, an injection) can be
/// reproduced in isolation.
pub fn derive_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut state = seed ^ 0x9e37_79b9_7f4a_7c15;
    let mut next = move |salt: u64| -> u64 {
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(salt);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    let mut bytes = [0u8; 32];
    for (i, chunk) in bytes.chunks_mut(8).enumerate() {
        let word = next(stream.wrapping_mul(3).wrapping_add(index).wrapping_add(i as u64));
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

/// RNG stream tags, one per random decision site.
pub mod streams {
    pub const PARAM_INIT: u64 = 1;
    pub const CORPUS_SCENARIO: u64 = 2;
    pub const TRAIN_STEP: u64 = 3;
    pub const GENERATION: u64 = 4;
    pub const EVAL: u64 = 5;
    pub const BASELINE: u64 = 6;
    pub const MASKING: u64 = 7;
}

/// Worker count: `SCENGEN_THREADS` when set, otherwise the rayon default.
pub fn worker_threads() -> Option<usize> {
    std::env::var("SCENGEN_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0)
}

/// Build a rayon pool honoring `SCENGEN_THREADS`.
pub fn make_pool() -> rayon::ThreadPool {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = worker_threads() {
        builder = builder.num_threads(n);
    }
    builder.build().expect("failed to build worker pool")
}
