//! Seeded random streams.
//!
//! Every draw comes from a ChaCha8 generator keyed by `seed ^ fnv1a64(label)`
//! with stream number `index` (usually the patient index), so any single
//! patient's draws can be reproduced in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const GENERATOR: &str = "ChaCha8Rng (rand_chacha 0.9); key = seed ^ fnv1a64(label); stream = index";

fn fnv1a64(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn stream(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(label));
    rng.set_stream(index);
    rng
}
