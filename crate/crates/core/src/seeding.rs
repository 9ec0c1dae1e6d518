//! Deterministic seed derivation for independent RNG streams.
//!
//! Every stochastic component (weight init, epoch shuffling, dropout, synth
//! trees, tuner trials) derives its own stream from one master seed so that
//! runs are reproducible regardless of evaluation order.

/// One round of the SplitMix64 output function.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives a child seed from a base seed and a sequence of salts.
pub fn derive_seed(base: u64, salts: &[u64]) -> u64 {
    let mut state = splitmix64(base);
    for &salt in salts {
        state = splitmix64(state ^ splitmix64(salt));
    }
    state
}

/// Hashes a string into a salt usable with [`derive_seed`].
pub fn salt_str(s: &str) -> u64 {
    // FNV-1a; stability across builds matters more than distribution quality.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}
