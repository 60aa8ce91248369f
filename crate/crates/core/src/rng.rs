//! Seeded random streams.
//!
//! All randomness goes through ChaCha20 (a counter-based generator). One user
//! seed fans out into independent named streams via the ChaCha stream id, so
//! drawing more design rows never shifts the noise or the outlier set.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Stream identifiers. Values are part of the reproducibility contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Design = 1,
    Weights = 2,
    Noise = 3,
    Outliers = 4,
    Contamination = 5,
    Split = 6,
    Features = 7,
    TestDesign = 8,
    TestNoise = 9,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngExt;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| stream(7, Stream::Design).random()).collect();
        let mut r1 = stream(7, Stream::Design);
        let mut r2 = stream(7, Stream::Design);
        let mut r3 = stream(7, Stream::Noise);
        let x1: u64 = r1.random();
        assert_eq!(x1, r2.random::<u64>());
        assert_ne!(x1, r3.random::<u64>());
        assert_eq!(a[0], a[1]);
    }
}
