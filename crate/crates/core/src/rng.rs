//! Seeded, counter-based random streams.
//!
//! Every random draw in the crate goes through [`CounterRng`], a thin
//! wrapper over ChaCha8 (`rand_chacha`). The 256-bit key is the little-endian
//! `u64` seed followed by 24 zero bytes; the 64-bit ChaCha stream id selects
//! an independent sequence for each image or ROI. ChaCha8 output is fixed by
//! its specification, so a `(seed, stream)` pair yields the same numbers on
//! every platform, and parallel workers that each own a stream reproduce a
//! serial run bit for bit.
//!
//! Floats are built from the top 53 bits of one `u64` draw, which keeps the
//! mapping independent of any `rand` distribution implementation.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

#[derive(Debug, Clone)]
pub struct CounterRng {
    inner: ChaCha8Rng,
}

impl CounterRng {
    /// Stream 0 for `seed`.
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut inner = ChaCha8Rng::from_seed(key);
        inner.set_stream(stream);
        Self { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`; returns `lo` when the interval is empty.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)` by rejection, so no modulo bias.
    ///
    /// # Panics
    ///
    /// Panics if `n == 0`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "empty range");
        // 2^64 mod n: draws below this would over-represent small residues
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.next_u64();
            if x >= threshold {
                return x % n;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_and_stream_repeat() {
        let mut a = CounterRng::with_stream(7, 3);
        let mut b = CounterRng::with_stream(7, 3);
        for _ in 0..64 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_differ() {
        let mut a = CounterRng::with_stream(7, 0);
        let mut b = CounterRng::with_stream(7, 1);
        assert_ne!(a.next_u64(), b.next_u64());
        let mut c = CounterRng::new(8);
        assert_ne!(CounterRng::new(7).next_u64(), c.next_u64());
    }

    #[test]
    fn floats_in_unit_interval() {
        let mut r = CounterRng::new(1);
        for _ in 0..10_000 {
            let x = r.next_f64();
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn below_stays_in_range() {
        let mut r = CounterRng::new(2);
        for n in [1u64, 2, 3, 7, 1000] {
            for _ in 0..200 {
                assert!(r.below(n) < n);
            }
        }
    }

    #[test]
    fn stream_is_pinned() {
        // freezes the documented key/stream layout against accidental changes
        let mut r = CounterRng::with_stream(42, 5);
        assert_eq!(r.next_u64(), 8314622729994604884);
        assert_eq!(r.next_u64(), 9788480710059284357);
    }
}
