//! Keyed random streams.
//!
//! Every random quantity in a run is drawn from its own ChaCha8 stream whose
//! key is derived from `(root seed, purpose, major, minor)`. Streams never
//! share state, so replications can run on any thread in any order and still
//! reproduce the same numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator type handed out for a single stream.
pub type StreamRng = ChaCha8Rng;

/// What a stream is used for. Part of the stream key, so two purposes with the
/// same indices never collide.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Purpose {
    Scenario,
    Direction,
    OutputIndex,
    AosScenario,
    Problem,
    Calibration,
    Replication,
    Diagnostic,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Scenario => 0x5c3e_0001,
            Purpose::Direction => 0x5c3e_0002,
            Purpose::OutputIndex => 0x5c3e_0003,
            Purpose::AosScenario => 0x5c3e_0004,
            Purpose::Problem => 0x5c3e_0005,
            Purpose::Calibration => 0x5c3e_0006,
            Purpose::Replication => 0x5c3e_0007,
            Purpose::Diagnostic => 0x5c3e_0008,
        }
    }
}

/// Stream key below a root: a purpose tag plus two indices (typically
/// iteration and sample index).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub purpose: Purpose,
    pub major: u64,
    pub minor: u64,
}

impl StreamId {
    pub const fn new(purpose: Purpose, major: u64, minor: u64) -> Self {
        Self {
            purpose,
            major,
            minor,
        }
    }
}

/// Root of a tree of streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngRoot(u64);

impl RngRoot {
    pub const fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub const fn seed(&self) -> u64 {
        self.0
    }

    /// Independent sub-root, e.g. one per replication.
    pub fn child(&self, purpose: Purpose, index: u64) -> RngRoot {
        let mut h = mix(self.0 ^ 0x243f_6a88_85a3_08d3);
        h = mix(h ^ purpose.tag());
        h = mix(h ^ index);
        RngRoot(h)
    }

    pub fn stream(&self, id: StreamId) -> StreamRng {
        let mut h = mix(self.0);
        h = mix(h ^ id.purpose.tag());
        h = mix(h ^ id.major);
        h = mix(h ^ id.minor.rotate_left(29));
        let mut key = [0u8; 32];
        let mut state = h;
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mix(x: u64) -> u64 {
    let mut s = x;
    splitmix64(&mut s)
}
