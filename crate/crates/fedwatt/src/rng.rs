//! Counter-based random substreams.
//!
//! Every logical draw site in an experiment gets its own generator,
//! addressed by a path of integer coordinates under a master seed: for
//! example `[purpose::CHANNEL, round, device]`. Streams are derived by a
//! splitmix-style hash of the path, so any site can be opened directly
//! without generating its predecessors, and the draws a site produces are
//! identical no matter how many workers run or in what order sites are
//! visited. Variable-rate consumers (rejection samplers) cannot leak into
//! neighbouring sites because no two sites share a stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream coordinates for the first path component, naming what the draws
/// are for. Rounds and device indices follow as further components.
pub mod purpose {
    /// Per-(round, device) fading and distance draws.
    pub const CHANNEL: u64 = 1;
    /// Per-(round, device) mini-batch index sampling.
    pub const BATCH: u64 = 2;
    /// Synthetic-task generation (class means, samples, test set).
    pub const TASK: u64 = 3;
    /// Device-profile sampling from config-declared grids.
    pub const DEVICES: u64 = 4;
    /// Monte Carlo validation oracles.
    pub const ORACLE: u64 = 5;
    /// Probe points for constant estimation.
    pub const PROBE: u64 = 6;
}

/// The concrete generator type handed out for a substream.
pub type SubRng = ChaCha8Rng;

/// Root of a family of addressable substreams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamTree {
    master: u64,
}

impl StreamTree {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Open the substream at `path`. The same (master, path) pair always
    /// yields a generator producing the same byte sequence.
    pub fn stream(&self, path: &[u64]) -> SubRng {
        let mut state = mix64(self.master ^ 0x9e37_79b9_7f4a_7c15);
        for &id in path {
            state = mix64(state.wrapping_add(mix64(id.wrapping_add(0xbf58_476d_1ce4_e5b9))));
        }
        let mut seed = [0u8; 32];
        let mut counter = state;
        for chunk in seed.chunks_exact_mut(8) {
            counter = counter.wrapping_add(0x9e37_79b9_7f4a_7c15);
            chunk.copy_from_slice(&mix64(counter).to_le_bytes());
        }
        SubRng::from_seed(seed)
    }
}

/// splitmix64 finalizer: a fast invertible mix with full avalanche.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
