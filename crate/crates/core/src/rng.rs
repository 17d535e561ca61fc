//! Deterministic splittable randomness and replica fan-out.
//!
//! A [`RandomStream`] is a ChaCha8 generator keyed by the master seed and
//! positioned on its own 64-bit stream index, so `(seed, index)` pins the whole
//! draw sequence and distinct indices never overlap.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct RandomStream {
    seed: u64,
    index: u64,
    rng: ChaCha8Rng,
}

pub fn derive_stream(seed: u64, index: u64) -> RandomStream {
    RandomStream::new(seed, index)
}

impl RandomStream {
    pub fn new(seed: u64, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        Self { seed, index, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform on `(0, 1]`, safe to take the logarithm of.
    pub fn uniform_open(&mut self) -> f64 {
        1.0 - self.uniform()
    }

    /// Exponential waiting time with the given total rate.
    pub fn exponential(&mut self, rate: f64) -> f64 {
        -self.uniform_open().ln() / rate
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn coin(&mut self) -> bool {
        self.next_u64() >> 63 == 1
    }
}

/// Runs `reps` independent replicas, replica `r` on stream `base + r`.
///
/// Results come back in replica order whatever the worker count, so any
/// sequential reduction over them is bit-reproducible.
pub fn run_replicas<R, F>(seed: u64, base: u64, reps: usize, workers: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize, &mut RandomStream) -> R + Sync + Send,
{
    let job = |r: usize| {
        let mut stream = derive_stream(seed, base + r as u64);
        f(r, &mut stream)
    };
    if workers == 1 {
        return (0..reps).map(job).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool");
    pool.install(|| (0..reps).into_par_iter().map(job).collect())
}
