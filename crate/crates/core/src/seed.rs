//! Deterministic random streams.
//!
//! Every replication gets a ChaCha key derived from `(master_seed, rep_index)`;
//! inside a replication, stream 0 drives background occupancy and stream
//! `d + 1` belongs to device `d`. Results therefore never depend on the order
//! in which replications are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream id reserved for background channel occupancy.
pub const BACKGROUND_STREAM: u64 = 0;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 256-bit ChaCha key for one replication.
pub fn replication_key(master_seed: u64, rep_index: u64) -> [u8; 32] {
    let mut state = master_seed ^ splitmix64(&mut rep_index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    key
}

pub fn stream_rng(key: [u8; 32], stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

pub fn device_stream(device: usize) -> u64 {
    device as u64 + 1
}
