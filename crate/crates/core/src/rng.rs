//! Hierarchical random streams.
//!
//! Every random draw in an experiment comes from a stream keyed by a path
//! `(seed, trial, purpose, round, index)`. Streams never share state, so adding
//! trials, rounds or devices leaves every existing stream untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type StreamRng = ChaCha12Rng;

/// What a stream is used for. The discriminant is part of the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Geometry = 1,
    Task = 2,
    Selection = 3,
    Channel = 4,
    Noise = 5,
    LocalSgd = 6,
    Init = 7,
    Validation = 8,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Root of the stream hierarchy for one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    state: u64,
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        Self { state: splitmix64(seed) }
    }

    /// Descend one level in the hierarchy.
    pub fn child(self, tag: u64) -> Self {
        Self { state: splitmix64(self.state ^ splitmix64(tag.wrapping_add(0xA5A5_A5A5))) }
    }

    pub fn trial(self, trial: usize) -> Self {
        self.child(trial as u64)
    }

    pub fn purpose(self, purpose: Purpose) -> Self {
        self.child(purpose as u64 + (1 << 40))
    }

    pub fn round(self, round: usize) -> Self {
        self.child(round as u64 + (2 << 40))
    }

    pub fn index(self, index: usize) -> Self {
        self.child(index as u64 + (3 << 40))
    }

    pub fn rng(self) -> StreamRng {
        StreamRng::seed_from_u64(self.state)
    }
}
