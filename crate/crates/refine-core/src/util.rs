//! Small shared utilities: seed derivation and float comparison.

/// splitmix64 finalizer; good avalanche, cheap, stable.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent sub-seed from a base seed and a list of tags
/// (step index, batch slot, position index, ...). Parallel workers each
/// derive their own stream, so execution order never affects results.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(base ^ 0x5bf0_3635_dead_beef);
    for &t in tags {
        state = splitmix64(state ^ t.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    state
}

/// FNV-1a over bytes, used for config digests in reports.
pub fn fnv1a_hex(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Max relative error between two slices, |a - b| / (|b| + 1e-8).
pub fn max_rel_err(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| ((x as f64) - (y as f64)).abs() / ((y as f64).abs() + 1e-8))
        .fold(0.0, f64::max)
}
