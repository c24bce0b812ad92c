//! Seedable, splittable random streams.
//!
//! A stream is a `(seed, stream_id)` pair mapped onto ChaCha8 with the
//! stream id selecting one of its 2^64 independent keystreams. Child streams
//! re-key the seed through SplitMix64 so that nested indices (setup, rule,
//! repetition, trajectory) never collide.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub const fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Child stream number `index`; its `stream_id` is `index` itself.
    pub fn substream(&self, index: u64) -> RngStream {
        RngStream {
            seed: splitmix64(self.seed ^ splitmix64(self.stream_id.wrapping_add(0xA076_1D64_78BD_642F))),
            stream_id: index,
        }
    }

    /// Child stream keyed by a label, for named sub-tasks ("beta0", "final-draws", ...).
    pub fn labelled(&self, label: &str) -> RngStream {
        // FNV-1a over the label bytes
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        for b in label.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        self.substream(h)
    }
}
