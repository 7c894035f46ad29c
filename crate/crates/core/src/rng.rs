//! Seed partitioning.
//!
//! Every random draw in a run comes from a ChaCha8 stream addressed by
//! `(run seed, user index, subsystem)`. The user index picks the 256-bit key
//! (through SplitMix64 expansion of the run seed), the subsystem picks the
//! ChaCha stream number. Adding users or subsystems never shifts an existing
//! stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Documented stream numbers. Never renumber an existing variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Subsystem {
    Profile = 1,
    Behavior = 2,
    Responder = 3,
    Sensors = 4,
    Planner = 5,
    Bandit = 6,
    MealAcceptance = 7,
    MonitorInit = 8,
    Disruption = 9,
}

/// Cohort-level draws that are not tied to one user use this index.
pub const COHORT_INDEX: u64 = u64::MAX;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, user: u64, subsystem: Subsystem) -> ChaCha8Rng {
    let mut state = seed ^ user.wrapping_mul(0xD1B5_4A32_D192_ED03);
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(subsystem as u64);
    rng
}
