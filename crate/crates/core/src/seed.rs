//! Seed derivation.
//!
//! Every random decision in the pipeline is keyed off one user-supplied build
//! seed. Per-record and per-purpose seeds are derived with FNV-1a over the
//! parent seed and a textual tag, so shuffling the input order or adding
//! records never perturbs the randomness of unrelated records.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over a byte slice.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    fold(FNV_OFFSET, bytes)
}

fn fold(mut hash: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Derives a sub-seed from a parent seed and a purpose tag.
pub fn derive(seed: u64, tag: &str) -> u64 {
    let hash = fold(FNV_OFFSET, &seed.to_le_bytes());
    fold(hash, tag.as_bytes())
}

/// Per-record seed: a record's randomness depends only on the build seed and
/// its own id.
pub fn record_seed(build_seed: u64, record_id: &str) -> u64 {
    derive(build_seed, record_id)
}

/// Deterministic generator for a derived seed.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
