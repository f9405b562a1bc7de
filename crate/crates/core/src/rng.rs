//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! seeded from a root seed mixed with a path of stream identifiers, so results
//! never depend on the order in which streams are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a root seed with a path of identifiers into a sub-seed.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(root), |acc, &p| {
        splitmix64(acc ^ splitmix64(p.wrapping_add(GOLDEN)))
    })
}

pub fn stream(root: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, path))
}

/// Uniform value in [0, 1) derived purely from a hash of the inputs.
pub fn hash_unit(root: u64, path: &[u64]) -> f64 {
    (derive_seed(root, path) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derivation_is_deterministic_and_path_sensitive() {
        assert_eq!(derive_seed(7, &[1, 2]), derive_seed(7, &[1, 2]));
        assert_ne!(derive_seed(7, &[1, 2]), derive_seed(7, &[2, 1]));
        assert_ne!(derive_seed(7, &[1]), derive_seed(8, &[1]));
        let a: u64 = stream(3, &[4]).random();
        let b: u64 = stream(3, &[4]).random();
        assert_eq!(a, b);
    }

    #[test]
    fn hash_unit_in_range() {
        for i in 0..1000 {
            let u = hash_unit(11, &[i]);
            assert!((0.0..1.0).contains(&u));
        }
    }
}
