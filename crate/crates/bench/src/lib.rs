//! Input fixtures shared by the benchmarks.

use csalign::{EmbeddingBatch, ModalityRing, Strategy};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// `m` modalities of `n` paired Gaussian rows in `d` dimensions.
pub fn gaussian_ring(m: usize, n: usize, d: usize, seed: u64) -> ModalityRing {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).collect();
    let batches = (0..m)
        .map(|i| {
            let data = Array2::from_shape_simple_fn((n, d), || rng.sample(StandardNormal));
            EmbeddingBatch::new(data, labels.clone(), format!("m{i}")).expect("gaussian rows are nonzero")
        })
        .collect();
    ModalityRing::new(batches, Strategy::Mixed).expect("paired batches")
}

/// A random point on the probability simplex of length `k`.
pub fn random_pmf(k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}
