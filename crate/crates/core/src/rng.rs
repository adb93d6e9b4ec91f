use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream seed for (master, step, lane). Same inputs always give the same
/// stream, so shard results do not depend on worker scheduling.
pub fn derive_seed(master: u64, step: u64, lane: u64) -> u64 {
    let mut s = splitmix64(master);
    s = splitmix64(s ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    splitmix64(s ^ lane.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
