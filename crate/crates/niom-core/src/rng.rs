//! Seeded, counter-based randomness helpers.
//!
//! Corruption noise must be reproducible regardless of thread count, so
//! instead of one shared RNG stream we derive an independent generator per
//! (seed, counter) key. `CounterRng` hashes a 64-bit counter with the
//! splitmix64 finalizer, which is statistically solid for this use and
//! stable across platforms and releases.

use rand::RngCore;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// splitmix64 finalizer: bijective 64-bit mixing.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combine a base seed with a stream key (e.g. a pixel index) into a new seed.
#[inline]
pub fn derive_seed(seed: u64, key: u64) -> u64 {
    mix64(seed ^ key.wrapping_mul(GOLDEN_GAMMA))
}

/// FNV-1a hash of a string, mixed with a 64-bit salt.
///
/// Used to derive per-pair seeds from pair ids. `std::hash` is not guaranteed
/// stable across compiler releases, so we pin the algorithm here.
pub fn stable_hash(salt: u64, s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix64(h ^ salt.wrapping_mul(GOLDEN_GAMMA))
}

/// Counter-based generator: output `i` is `mix64(key + i*gamma)`.
///
/// Creating one per pixel is free (no buffer, no warm-up), which is what the
/// corruption kernels rely on for order-independent determinism.
#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self {
            key: derive_seed(seed, stream),
            counter: 0,
        }
    }
}

impl RngCore for CounterRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        for chunk in dest.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}
