//! Deterministic stream derivation.
//!
//! Every source of randomness in the simulator is a ChaCha stream derived
//! from the experiment seed plus a small set of integer tags (purpose,
//! round, client). Streams derived this way are independent of evaluation
//! order, which is what makes parallel and sequential runs bit-identical.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags keep unrelated streams from colliding.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    DataGen = 1,
    Partition = 2,
    InitModel = 3,
    InitMask = 4,
    Topology = 5,
    Dropout = 6,
    TrainBatch = 7,
    MaskSearch = 8,
    TestShard = 9,
}

/// Derive an independent RNG from `(seed, purpose, a, b)`.
///
/// The tags are mixed with splitmix64 so that nearby tag values do not
/// produce correlated ChaCha key material.
pub fn derive(seed: u64, purpose: Stream, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let words = [
        splitmix(seed ^ 0x9e37_79b9_7f4a_7c15),
        splitmix(purpose as u64),
        splitmix(a.wrapping_add(0x1234_5678_9abc_def0)),
        splitmix(b.wrapping_add(0x0fed_cba9_8765_4321)),
    ];
    for (i, w) in words.iter().enumerate() {
        key[i * 8..(i + 1) * 8].copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
