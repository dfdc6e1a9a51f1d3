//! Counter-addressed random streams.
//!
//! Every path owns a ChaCha8 stream selected by `(seed, path)`. Within a stream,
//! time step `s` consumes a fixed block of words, so the Gaussian draws of any
//! `(seed, path, step, mode)` are reachable by seeking and do not depend on how
//! many other paths or steps were generated before.

use std::f64::consts::TAU;

use rand_chacha::rand_core::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform in `(0, 1]` from the top 53 bits.
#[inline]
fn open_unit(x: u64) -> f64 {
    ((x >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64)
}

#[inline]
fn box_muller(a: u64, b: u64) -> (f64, f64) {
    let r = (-2.0 * open_unit(a).ln()).sqrt();
    let theta = TAU * open_unit(b);
    let (s, c) = theta.sin_cos();
    (r * c, r * s)
}

/// General-purpose seeded generator for experiment setup (initial data,
/// dictionaries, test fields).
#[derive(Debug, Clone)]
pub struct SimRng {
    inner: ChaCha8Rng,
    spare: Option<f64>,
}

impl SimRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner, spare: None }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let (z0, z1) = box_muller(self.inner.next_u64(), self.inner.next_u64());
        self.spare = Some(z1);
        z0
    }
}

/// Stream of per-step standard normal vectors for one path.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    seed: u64,
    path: u64,
    step: u64,
    modes: usize,
}

impl NoiseStream {
    /// Stream 0 is reserved for setup draws, so noise for path `p` uses stream `p + 1`.
    pub fn new(seed: u64, path: u64, modes: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path.wrapping_add(1));
        Self {
            rng,
            seed,
            path,
            step: 0,
            modes,
        }
    }

    fn words_per_step(&self) -> u128 {
        // two u64 (four u32 words) per Box-Muller pair
        (self.modes.div_ceil(2) as u128) * 4
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> u64 {
        self.path
    }

    /// Index of the next step to be drawn.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn seek(&mut self, step: u64) {
        self.rng.set_word_pos(u128::from(step) * self.words_per_step());
        self.step = step;
    }

    /// Fills `out` (length `modes`) with independent standard normals for the
    /// current step and advances to the next one.
    pub fn fill_standard_normals(&mut self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.modes);
        let mut chunks = out.chunks_mut(2);
        for pair in &mut chunks {
            let (z0, z1) = box_muller(self.rng.next_u64(), self.rng.next_u64());
            pair[0] = z0;
            if pair.len() > 1 {
                pair[1] = z1;
            }
        }
        self.step += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeking_reproduces_sequential_draws() {
        let mut seq = NoiseStream::new(42, 3, 7);
        let mut draws = vec![vec![0.0; 7]; 5];
        for d in draws.iter_mut() {
            seq.fill_standard_normals(d);
        }
        let mut jump = NoiseStream::new(42, 3, 7);
        jump.seek(3);
        let mut out = vec![0.0; 7];
        jump.fill_standard_normals(&mut out);
        assert_eq!(out, draws[3]);
        assert_eq!(jump.step(), 4);
    }

    #[test]
    fn paths_are_distinct_streams() {
        let mut a = NoiseStream::new(1, 0, 4);
        let mut b = NoiseStream::new(1, 1, 4);
        let (mut x, mut y) = (vec![0.0; 4], vec![0.0; 4]);
        a.fill_standard_normals(&mut x);
        b.fill_standard_normals(&mut y);
        assert_ne!(x, y);
    }

    #[test]
    fn normals_have_unit_moments() {
        let mut s = NoiseStream::new(9, 0, 64);
        let mut buf = vec![0.0; 64];
        let (mut sum, mut sq, mut count) = (0.0, 0.0, 0.0);
        for _ in 0..2000 {
            s.fill_standard_normals(&mut buf);
            for &z in &buf {
                sum += z;
                sq += z * z;
                count += 1.0;
            }
        }
        let mean = sum / count;
        let var = sq / count - mean * mean;
        assert!(mean.abs() < 0.01);
        assert!((var - 1.0).abs() < 0.02);
    }
}
