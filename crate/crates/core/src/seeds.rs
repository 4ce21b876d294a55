//! Seed hierarchy: every stochastic stage draws from a child seed derived
//! from the run's root seed and a stage label.

/// SplitMix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed of `parent` for the stage called `tag`. Stable across
/// platforms and releases.
pub fn derive_seed(parent: u64, tag: &str) -> u64 {
    // FNV-1a over the tag
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    mix(parent ^ mix(h))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn children_are_stable_and_distinct() {
        assert_eq!(derive_seed(42, "synth"), derive_seed(42, "synth"));
        assert_ne!(derive_seed(42, "synth"), derive_seed(42, "unet"));
        assert_ne!(derive_seed(42, "synth"), derive_seed(43, "synth"));
        // frozen value guards against accidental changes to the hierarchy
        assert_eq!(derive_seed(0, ""), mix(mix(0xcbf2_9ce4_8422_2325)));
    }
}
