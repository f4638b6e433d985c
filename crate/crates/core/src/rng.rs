//! Deterministic counter-based generator (splitmix64 finalizer).
//!
//! Draw `i` depends only on `(seed, i)`, so sequences are reproducible
//! across platforms and independent of call-site history beyond the counter.

use crate::tensor::Tensor;
use alloc::vec::Vec;

const GOLDEN: u64 = 0x9E3779B97F4A7C15;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    seed: u64,
    counter: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, counter: 0 }
    }

    /// Independent stream for the same seed; `tag` picks the stream.
    pub fn stream(seed: u64, tag: u64) -> Self {
        Rng::new(mix(seed ^ mix(tag)))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform in [0, 1) with 53 bits of mantissa.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + self.next_f64() * (hi - lo)
    }

    /// Uniform in [-a, a].
    pub fn symmetric(&mut self, a: f64) -> f64 {
        self.uniform(-a, a)
    }

    pub fn fill_symmetric(&mut self, shape: &[usize], a: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| self.symmetric(a)).collect();
        Tensor::new(shape, data).expect("shape/data length consistent by construction")
    }

    /// Permutation of 0..n via seeded Fisher-Yates.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = (self.next_u64() % (i as u64 + 1)) as usize;
            idx.swap(i, j);
        }
        idx
    }
}

fn mix(z0: u64) -> u64 {
    let mut z = z0;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_seeds_equal_draws() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        for _ in 0..16 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    // Frozen from a standalone splitmix64 reference run (seed 42, draws 1-3).
    #[test]
    fn seed_42_reference_outputs() {
        let mut r = Rng::new(42);
        assert_eq!(r.next_u64(), 13679457532755275413);
        assert_eq!(r.next_u64(), 2949826092126892291);
        assert_eq!(r.next_u64(), 5139283748462763858);
        assert_eq!(r.counter(), 3);
    }

    #[test]
    fn f64_draws_are_in_unit_interval() {
        let mut r = Rng::new(123);
        for _ in 0..1000 {
            let x = r.next_f64();
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn streams_with_distinct_tags_differ() {
        let mut a = Rng::stream(9, 1);
        let mut b = Rng::stream(9, 2);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut r = Rng::new(5);
        let p = r.permutation(20);
        let mut seen = [false; 20];
        for &i in &p {
            assert!(!seen[i]);
            seen[i] = true;
        }
    }
}
