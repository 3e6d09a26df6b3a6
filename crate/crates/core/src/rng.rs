//! Named seed streams derived from one master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const POLICY_INIT: &str = "policy-init";
pub const SAMPLING: &str = "sampling";
pub const TASK_SYNTHESIS: &str = "task-synthesis";
pub const ISLANDS: &str = "islands";

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the sub-stream `name` under `master`.
pub fn stream_seed(master: u64, name: &str) -> u64 {
    let h = name
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3));
    splitmix(splitmix(master) ^ h)
}

pub fn stream(master: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(master, name))
}
