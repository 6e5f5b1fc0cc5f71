//! Counter-based substream derivation.
//!
//! Every random draw in the crate comes from a stream identified by a master
//! seed and an ordered tuple of 64-bit labels. The labels are absorbed into a
//! 256-bit key with a SplitMix64-style finalizer; the key seeds a
//! xoshiro256++ generator. Streams can therefore be created in any order on
//! any thread and still produce the same values.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

/// The generator handed to samplers.
pub type SubstreamRng = Xoshiro256PlusPlus;

const LANE_SALT: [u64; 4] = [
    0x243F_6A88_85A3_08D3,
    0x1319_8A2E_0370_7344,
    0xA409_3822_299F_31D0,
    0x082E_FA98_EC4E_6C89,
];

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A master seed together with its stream labels.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    #[serde(default)]
    pub labels: Vec<u64>,
}

impl SeedSpec {
    pub fn new(master_seed: u64) -> Self {
        SeedSpec {
            master_seed,
            labels: Vec::new(),
        }
    }

    pub fn with_labels(master_seed: u64, labels: &[u64]) -> Self {
        SeedSpec {
            master_seed,
            labels: labels.to_vec(),
        }
    }

    /// Extends the label tuple by one label.
    pub fn child(&self, label: u64) -> Self {
        let mut labels = self.labels.clone();
        labels.push(label);
        SeedSpec {
            master_seed: self.master_seed,
            labels,
        }
    }

    pub fn key(&self) -> StreamKey {
        self.labels
            .iter()
            .fold(StreamKey::root(self.master_seed), |k, &l| k.child(l))
    }
}

/// The absorbed form of a [`SeedSpec`]. Cheap to copy and to extend, which is
/// what the inner Monte Carlo loops use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey([u64; 4]);

impl StreamKey {
    pub fn root(master_seed: u64) -> Self {
        let mut lanes = [0u64; 4];
        for (lane, salt) in lanes.iter_mut().zip(LANE_SALT) {
            *lane = mix64(master_seed ^ salt);
        }
        StreamKey(lanes)
    }

    #[inline]
    pub fn child(self, label: u64) -> Self {
        let mut lanes = self.0;
        for (lane, salt) in lanes.iter_mut().zip(LANE_SALT) {
            *lane = mix64(*lane ^ mix64(label.wrapping_add(salt)));
        }
        StreamKey(lanes)
    }

    #[inline]
    pub fn rng(self) -> SubstreamRng {
        let mut seed = [0u8; 32];
        for (chunk, lane) in seed.chunks_exact_mut(8).zip(self.0) {
            chunk.copy_from_slice(&lane.to_le_bytes());
        }
        Xoshiro256PlusPlus::from_seed(seed)
    }
}

/// Returns the generator for a seed specification. Pure in its input.
pub fn derive_substream(seed: &SeedSpec) -> SubstreamRng {
    seed.key().rng()
}

/// Fixed purpose tags, so that streams used for different jobs never share labels.
pub mod purpose {
    pub const SAMPLE: u64 = 0x5341_4D50;
    pub const INNER: u64 = 0x494E_4E52;
    pub const VES: u64 = 0x5645_5300;
    pub const MEAN: u64 = 0x4D45_414E;
    pub const MEAN_V: u64 = 0x4D45_4156;
    pub const TRIAL: u64 = 0x5452_4941;
    pub const PAIR: u64 = 0x5041_4952;
    pub const MEAN_B: u64 = 0x4D45_4142;
    pub const CLAIM: u64 = 0x434C_4149;
    pub const MOMENTS: u64 = 0x4D4F_4D53;
    pub const ESTIMATE: u64 = 0x4553_5449;
    pub const REUSE: u64 = 0x5245_5553;
    pub const TAIL: u64 = 0x5441_494C;
}
