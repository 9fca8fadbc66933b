//! Fixtures shared by the benchmarks.

use linc_core::ProbVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` random label-probability vectors over `classes` classes with labels.
pub fn random_validation(n: usize, classes: usize, seed: u64) -> Vec<(ProbVector, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let w: Vec<f64> = (0..classes).map(|_| rng.random_range(0.01..1.0)).collect();
            let p = ProbVector::normalize(w).expect("positive weights");
            (p, rng.random_range(0..classes))
        })
        .collect()
}
