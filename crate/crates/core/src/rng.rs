//! Seeded random streams. A root seed fans out into independent labeled
//! substreams so that adding a consumer never shifts another's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Stream `label` of the root `seed`.
pub fn substream(seed: u64, label: &str) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(label));
    rng
}

/// A child seed for `label`, for APIs that take a plain `u64`.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    use rand::RngCore;
    substream(seed, label).next_u64()
}
