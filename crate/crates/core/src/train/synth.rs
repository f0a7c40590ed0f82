//! Class-conditioned Gaussian data for `M` modalities.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::pmf::EmbeddingBatch;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub per_class: usize,
    pub input_dims: Vec<usize>,
    pub embed_dim: usize,
    pub class_sep: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 8,
            per_class: 200,
            input_dims: vec![64, 64, 64],
            embed_dim: 16,
            class_sep: 6.0,
            noise_sigma: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.num_classes < 2 {
            return bad("num_classes must be >= 2");
        }
        if self.per_class < 2 {
            return bad("per_class must be >= 2");
        }
        if self.input_dims.len() < 2 || self.input_dims.contains(&0) {
            return bad("input_dims needs >= 2 positive entries");
        }
        if self.embed_dim == 0 {
            return bad("embed_dim must be >= 1");
        }
        if !(self.class_sep > 0.0) || !self.class_sep.is_finite() {
            return bad("class_sep must be > 0");
        }
        if !(self.noise_sigma > 0.0) || !self.noise_sigma.is_finite() {
            return bad("noise_sigma must be > 0");
        }
        Ok(())
    }

    pub fn modalities(&self) -> usize {
        self.input_dims.len()
    }
}

/// Default modality name for ring position `m`: `a`, `b`, `c`, ...
pub fn modality_name(m: usize) -> String {
    if m < 26 {
        char::from(b'a' + m as u8).to_string()
    } else {
        format!("m{m}")
    }
}

/// One batch per modality, `num_classes * per_class` rows each, class-major
/// order, labels identical across modalities. Class means are independent
/// random directions per modality, scaled to length `class_sep`.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<EmbeddingBatch>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.num_classes * cfg.per_class;
    let labels: Vec<usize> = (0..n).map(|i| i / cfg.per_class).collect();
    cfg.input_dims
        .iter()
        .enumerate()
        .map(|(m, &dim)| {
            let means: Vec<Array1<f64>> = (0..cfg.num_classes)
                .map(|_| {
                    let v: Array1<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let len = v.dot(&v).sqrt();
                    v * (cfg.class_sep / len)
                })
                .collect();
            let mut data = Array2::zeros((n, dim));
            for (i, mut row) in data.rows_mut().into_iter().enumerate() {
                let mean = &means[labels[i]];
                for (x, mu) in row.iter_mut().zip(mean.iter()) {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *x = mu + cfg.noise_sigma * z;
                }
            }
            EmbeddingBatch::new(data, labels.clone(), modality_name(m))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Axis;

    fn small() -> SynthConfig {
        SynthConfig { num_classes: 4, per_class: 25, input_dims: vec![8, 5, 6], embed_dim: 4, ..Default::default() }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SynthConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn shapes_and_labels() {
        let data = generate_synthetic(&small()).unwrap();
        assert_eq!(data.len(), 3);
        assert_eq!(data[1].data().dim(), (100, 5));
        assert_eq!(data[0].labels(), data[2].labels());
        assert_eq!(data[0].labels()[26], 1);
        assert_eq!(data.iter().map(|b| b.modality().to_string()).collect::<Vec<_>>(), ["a", "b", "c"]);
    }

    #[test]
    fn vanishing_noise_collapses_classes() {
        let data = generate_synthetic(&SynthConfig { noise_sigma: 1e-300, ..small() }).unwrap();
        for b in &data {
            for c in 0..4 {
                let first = b.data().row(c * 25).to_owned();
                for i in c * 25..(c + 1) * 25 {
                    assert_eq!(b.data().row(i), first);
                }
            }
        }
    }

    #[test]
    fn well_separated_classes_are_nearest_centroid_separable() {
        let cfg = SynthConfig { num_classes: 4, per_class: 100, class_sep: 10.0, noise_sigma: 0.1, ..small() };
        for b in generate_synthetic(&cfg).unwrap() {
            let centroids: Vec<_> = (0..4)
                .map(|c| b.data().slice(ndarray::s![c * 100..(c + 1) * 100, ..]).mean_axis(Axis(0)).unwrap())
                .collect();
            let correct = b
                .data()
                .axis_iter(Axis(0))
                .zip(b.labels())
                .filter(|(x, &l)| {
                    let nearest = (0..4)
                        .min_by(|&i, &j| {
                            let di = (&centroids[i] - x).mapv(|v| v * v).sum();
                            let dj = (&centroids[j] - x).mapv(|v| v * v).sum();
                            di.total_cmp(&dj)
                        })
                        .unwrap();
                    nearest == l
                })
                .count();
            assert!(correct as f64 / 400.0 >= 0.99);
        }
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            SynthConfig { num_classes: 1, ..small() },
            SynthConfig { per_class: 1, ..small() },
            SynthConfig { class_sep: 0.0, ..small() },
            SynthConfig { noise_sigma: -1.0, ..small() },
            SynthConfig { input_dims: vec![3], ..small() },
        ] {
            assert!(generate_synthetic(&cfg).is_err());
        }
    }
}
