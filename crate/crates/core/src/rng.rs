//! Seed derivation. Every random stream in a run is a ChaCha generator keyed by
//! `(master seed, purpose, vehicle id)`, so adding vehicles never perturbs the
//! streams of existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Placement,
    Speed,
    Loss,
    RogueSelection,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Placement => 0x706c_6163,
            Purpose::Speed => 0x7370_6564,
            Purpose::Loss => 0x6c6f_7373,
            Purpose::RogueSelection => 0x726f_6775,
        }
    }
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, purpose: Purpose, index: u64) -> u64 {
    mix64(mix64(master ^ mix64(purpose.tag())) ^ index)
}

pub fn stream(master: u64, purpose: Purpose, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master, purpose, index))
}

/// One stream per vehicle for the given purpose.
pub fn per_vehicle(master: u64, purpose: Purpose, n: usize) -> Vec<StreamRng> {
    (0..n as u64).map(|i| stream(master, purpose, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_independent_of_population_size() {
        let small = per_vehicle(7, Purpose::Speed, 3);
        let large = per_vehicle(7, Purpose::Speed, 30);
        for (mut a, mut b) in small.into_iter().zip(large) {
            assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
    }

    #[test]
    fn purposes_differ() {
        assert_ne!(
            derive_seed(1, Purpose::Speed, 0),
            derive_seed(1, Purpose::Loss, 0)
        );
        assert_ne!(
            derive_seed(1, Purpose::Speed, 0),
            derive_seed(2, Purpose::Speed, 0)
        );
    }
}
