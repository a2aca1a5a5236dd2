//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8 (`rand_chacha`), keyed by
//! a user seed and a purpose tag, with the 64-bit ChaCha stream id selecting
//! the item (dataset index, example position, ...). Results therefore do not
//! depend on iteration order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Init,
    Synthesis,
    Labels,
    Split,
    Shuffle,
    Dropout,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Init => 0x494e_4954,
            Purpose::Synthesis => 0x5359_4e54,
            Purpose::Labels => 0x4c41_4245,
            Purpose::Split => 0x5350_4c54,
            Purpose::Shuffle => 0x5348_5546,
            Purpose::Dropout => 0x4452_4f50,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> StreamRng {
    let key = splitmix64(seed ^ splitmix64(purpose.tag()));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

/// Fisher-Yates shuffle with an explicit index draw, independent of `rand`'s
/// `SliceRandom` implementation details.
pub fn shuffle<T>(items: &mut [T], rng: &mut StreamRng) {
    use rand::Rng;
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}
