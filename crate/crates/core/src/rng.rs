//! Counter-based random streams.
//!
//! Every random draw in a simulation comes from a ChaCha8 stream addressed by
//! `(seed, phase, replay, entity, iteration)`. The stream id packs
//! phase/replay/entity and the iteration selects a disjoint window of the
//! keystream, so a draw never depends on how many draws happened elsewhere.
//! Parallel execution order therefore cannot change results, and two
//! algorithms run with the same seed see identical gradient and uplink
//! randomness wherever they query the same stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// The stream concrete type handed to operators.
pub type Stream = ChaCha8Rng;

/// 2^36 32-bit words per (stream, iteration) window.
const ITER_WINDOW_BITS: u32 = 36;
const ENTITY_BITS: u32 = 32;
const REPLAY_BITS: u32 = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Phase {
    /// Synthetic data generation.
    Data = 0,
    /// Mini-batch sampling for a worker's stochastic gradient.
    Grad = 1,
    /// Uplink compression of a worker's message.
    Up = 2,
    /// Downlink compression of a group's message.
    Dwn = 3,
    /// Bernoulli participation mask.
    Participation = 4,
    /// Gradient draw used to initialise the uplink memories.
    InitGrad = 5,
    /// Validation and Monte-Carlo harnesses.
    Probe = 6,
}

/// Root of all streams of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngRoot {
    pub seed: u64,
}

impl RngRoot {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn stream(&self, phase: Phase, entity: u64, iteration: u64) -> Stream {
        self.replay_stream(phase, 0, entity, iteration)
    }

    /// Stream for an independent replay of the same (phase, entity, iteration)
    /// slot. Replay 0 is the slot used by ordinary runs.
    pub fn replay_stream(&self, phase: Phase, replay: u64, entity: u64, iteration: u64) -> Stream {
        debug_assert!(replay < (1 << REPLAY_BITS));
        debug_assert!(entity < (1 << ENTITY_BITS));
        debug_assert!(iteration < (1 << 32));
        let id = ((phase as u64) << (REPLAY_BITS + ENTITY_BITS))
            | ((replay & ((1 << REPLAY_BITS) - 1)) << ENTITY_BITS)
            | (entity & ((1 << ENTITY_BITS) - 1));
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(id);
        rng.set_word_pos((iteration as u128) << ITER_WINDOW_BITS);
        rng
    }

    /// A child root, used to derive per-trial or per-attempt seeds.
    pub fn child(&self, salt: u64) -> Self {
        Self { seed: splitmix64(self.seed ^ splitmix64(salt.wrapping_add(0x9e37_79b9_7f4a_7c15))) }
    }
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
