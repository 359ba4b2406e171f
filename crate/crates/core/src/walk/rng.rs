//! Portable random stream for walks.
//!
//! The bit stream is ChaCha8 (`rand_chacha::ChaCha8Rng::seed_from_u64`),
//! which is specified independently of platform and word size. Uniforms take
//! the top 53 bits of each `u64`; normals come from the Marsaglia polar
//! method, drawing `u` then `v`, rejecting `s = u² + v² ∉ (0, 1)`, returning
//! `u·m` and caching `v·m` for the next call.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

#[derive(Debug, Clone)]
pub struct WalkRng {
    inner: ChaCha8Rng,
    spare: Option<f64>,
}

impl WalkRng {
    pub fn new(seed: u64) -> Self {
        WalkRng {
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let m = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(v * m);
                return u * m;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = WalkRng::new(7);
        let mut b = WalkRng::new(7);
        for _ in 0..100 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
        assert_ne!(WalkRng::new(7).uniform(), WalkRng::new(8).uniform());
    }

    #[test]
    fn normal_moments() {
        let mut r = WalkRng::new(1);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| r.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((var - 1.0).abs() < 0.02, "{var}");
    }

    #[test]
    fn uniform_range() {
        let mut r = WalkRng::new(3);
        assert!((0..10_000).map(|_| r.uniform()).all(|u| (0.0..1.0).contains(&u)));
    }
}
