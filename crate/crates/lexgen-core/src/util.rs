//! Deterministic seed derivation and shuffling, shared by every component
//! that needs reproducible randomness (splitters, trainer, fixtures, dropout).
//!
//! Everything here is documented precisely enough to replay in a few lines,
//! and the replay-oracle tests do exactly that re-derivation independently.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a 64-bit seed from context strings.
///
/// Rule: join the parts with `\x1f` (unit separator), SHA-256 the UTF-8
/// bytes, and read the first 8 digest bytes as a little-endian u64.
pub fn derived_seed(parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            hasher.update([0x1f]);
        }
        hasher.update(p.as_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has at least 8 bytes"))
}

pub fn rng_from(parts: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derived_seed(parts))
}

/// Fisher-Yates shuffle with the index draw spelled out so other
/// implementations can reproduce it: for i from n-1 down to 1,
/// j = next_u64() mod (i+1), swap(v[i], v[j]).
pub fn fisher_yates<T>(v: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..v.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        v.swap(i, j);
    }
}

/// splitmix64 step, the standard constants. Used as a tiny counter-based
/// generator for dropout masks (one stream per (seed, counter) pair).
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform draw in [0,1) from the top 53 bits of a splitmix64 output.
pub fn unit_f64(state: &mut u64) -> f64 {
    (splitmix64(state) >> 11) as f64 / (1u64 << 53) as f64
}

/// Unicode canonical composition (NFC).
pub fn nfc(s: &str) -> String {
    icu_normalizer::ComposingNormalizerBorrowed::new_nfc()
        .normalize(s)
        .into_owned()
}
