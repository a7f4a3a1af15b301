//! Seeded synthetic datasets for tests, benches and the CLI.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Gaussian blobs around uniformly placed centres in `[-1, 1]^dim`.
#[derive(Debug, Clone)]
pub struct Clustered {
    dim: usize,
    centres: Vec<f32>,
    noise: Normal<f32>,
    rng: ChaCha8Rng,
}

impl Clustered {
    pub fn new(dim: usize, clusters: usize, spread: f32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centres = (0..clusters.max(1) * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Self {
            dim,
            centres,
            noise: Normal::new(0.0, spread.max(f32::MIN_POSITIVE)).expect("finite spread"),
            rng,
        }
    }

    /// Independent stream over the same centres.
    pub fn fork(&self, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            ..self.clone()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample(&mut self) -> Vec<f32> {
        let k = self.centres.len() / self.dim;
        let c = self.rng.gen_range(0..k);
        let centre = &self.centres[c * self.dim..(c + 1) * self.dim];
        centre.iter().map(|&x| x + self.noise.sample(&mut self.rng)).collect()
    }

    pub fn take_vec(&mut self, n: usize) -> Vec<Vec<f32>> {
        (0..n).map(|_| self.sample()).collect()
    }
}

impl Iterator for Clustered {
    type Item = Vec<f32>;

    fn next(&mut self) -> Option<Vec<f32>> {
        Some(self.sample())
    }
}

/// `n` vectors uniform in `[-1, 1]^dim`.
pub fn uniform(n: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

/// Tag levels: token `sel<j>` is present with probability `10^-j`.
pub fn selectivity_tags(levels: usize, rng: &mut impl Rng) -> Vec<String> {
    (0..levels)
        .filter(|&j| rng.gen_bool(10f64.powi(-(j as i32))))
        .map(|j| format!("sel{j}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_shaped() {
        let a = Clustered::new(8, 5, 0.1, 3).take_vec(10);
        let b = Clustered::new(8, 5, 0.1, 3).take_vec(10);
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.len() == 8));
        assert_eq!(uniform(4, 3, 1), uniform(4, 3, 1));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut counts = [0usize; 3];
        for _ in 0..10_000 {
            for t in selectivity_tags(3, &mut rng) {
                counts[t[3..].parse::<usize>().unwrap()] += 1;
            }
        }
        assert_eq!(counts[0], 10_000);
        assert!((800..1200).contains(&counts[1]));
        assert!((50..160).contains(&counts[2]));
    }
}
