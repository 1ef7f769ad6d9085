//! Order-independent random streams.
//!
//! A stream is addressed by `(run seed, purpose, index, step)`. The tuple is
//! hashed into a ChaCha seed, so the draws for one example at one step never
//! depend on how many other draws happened before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a random stream is used for. Distinct tags give independent streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Purpose {
    ModelInit,
    SampleLabeled,
    SampleUnlabeled,
    WeakLabeled,
    WeakUnlabeled,
    /// k-th weak augmentation of an unlabeled example during label guessing.
    GuessAugment(u32),
    Strong,
    MixupShuffle,
    Mixup,
    Split,
    SplitClass(u8),
    Synth,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::ModelInit => 1,
            Purpose::SampleLabeled => 2,
            Purpose::SampleUnlabeled => 3,
            Purpose::WeakLabeled => 4,
            Purpose::WeakUnlabeled => 5,
            Purpose::GuessAugment(k) => 0x100 + k as u64,
            Purpose::Strong => 6,
            Purpose::MixupShuffle => 7,
            Purpose::Mixup => 8,
            Purpose::Split => 9,
            Purpose::SplitClass(c) => 0x200 + c as u64,
            Purpose::Synth => 10,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Root of a family of derived random streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn derive_seed(&self, purpose: Purpose, index: u64, step: u64) -> u64 {
        let mut h = splitmix64(self.seed);
        for word in [purpose.tag(), index, step] {
            h = splitmix64(h ^ word);
        }
        h
    }

    pub fn derive(&self, purpose: Purpose, index: u64, step: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.derive_seed(purpose, index, step))
    }

    /// A child root, e.g. one per grid cell.
    pub fn child(&self, key: u64) -> RngStream {
        RngStream { seed: splitmix64(self.seed ^ splitmix64(key)) }
    }
}
