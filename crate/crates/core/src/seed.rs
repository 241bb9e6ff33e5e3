//! Labeled sub-seeds derived from one top-level seed.

/// Mixes `base` with `label` so every consumer gets an independent stream.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    // FNV-1a over the label, then a splitmix64 finalizer
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix(base ^ h)
}

/// Sub-seed for the `index`-th draw of a labeled stream.
pub fn indexed_seed(base: u64, label: &str, index: u64) -> u64 {
    splitmix(derive_seed(base, label).wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_separate_streams() {
        assert_ne!(derive_seed(1, "cluster"), derive_seed(1, "train"));
        assert_eq!(derive_seed(1, "train"), derive_seed(1, "train"));
        assert_ne!(indexed_seed(1, "step", 0), indexed_seed(1, "step", 1));
    }
}
