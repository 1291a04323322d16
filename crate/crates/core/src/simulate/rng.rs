//! Deterministic random streams keyed by `(seed, domain, replicate, subject)`.
//!
//! The ChaCha key is derived from `(seed, domain, replicate)` by SplitMix64
//! mixing and the subject index selects the ChaCha stream, so every subject
//! of every replicate draws from its own independent sequence regardless of
//! which thread generates it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Streams used for generated trial data.
pub const DOMAIN_DATA: u64 = 0;
/// Streams used for Monte Carlo calibration of scenario constants.
pub const DOMAIN_CALIBRATION: u64 = 1;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream_rng(seed: u64, domain: u64, replicate: u64, subject: u64) -> ChaCha8Rng {
    let mut state = splitmix64(seed);
    state = splitmix64(state ^ domain.wrapping_mul(0xd6e8_feb8_6659_fd93));
    state = splitmix64(state ^ replicate);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(subject);
    rng
}
