//! Per-modality projection heads into the shared embedding space.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Affine map `x W + b`, optionally preceded by a `tanh` hidden layer.
///
/// Parameters are stored as a flat list of matrices (biases are `1 x k`) so
/// the optimizer can treat every encoder uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    params: Vec<Array2<f64>>,
    hidden: bool,
}

/// Activations kept from a forward pass for the backward pass.
pub struct ForwardCache {
    input: Array2<f64>,
    hidden: Option<Array2<f64>>,
}

fn init_weight<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let normal = Normal::new(0.0, 1.0 / (rows as f64).sqrt()).expect("valid std");
    Array2::from_shape_simple_fn((rows, cols), || normal.sample(rng))
}

impl Encoder {
    pub fn linear<R: Rng>(input_dim: usize, embed_dim: usize, rng: &mut R) -> Self {
        Self { params: vec![init_weight(input_dim, embed_dim, rng), Array2::zeros((1, embed_dim))], hidden: false }
    }

    pub fn mlp<R: Rng>(input_dim: usize, hidden_dim: usize, embed_dim: usize, rng: &mut R) -> Self {
        Self {
            params: vec![
                init_weight(input_dim, hidden_dim, rng),
                Array2::zeros((1, hidden_dim)),
                init_weight(hidden_dim, embed_dim, rng),
                Array2::zeros((1, embed_dim)),
            ],
            hidden: true,
        }
    }

    pub fn params(&self) -> &[Array2<f64>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.params[0].nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.params.last().expect("encoder has params").ncols()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, ForwardCache) {
        let first = x.dot(&self.params[0]) + &self.params[1];
        if self.hidden {
            let act = first.mapv(f64::tanh);
            let out = act.dot(&self.params[2]) + &self.params[3];
            (out, ForwardCache { input: x.to_owned(), hidden: Some(act) })
        } else {
            (first, ForwardCache { input: x.to_owned(), hidden: None })
        }
    }

    /// Parameter gradients given `dL/d(output)`, in `params()` order.
    pub fn backward(&self, cache: &ForwardCache, g_out: &Array2<f64>) -> Vec<Array2<f64>> {
        let bias_grad = |g: &Array2<f64>| g.sum_axis(Axis(0)).insert_axis(Axis(0));
        match &cache.hidden {
            None => vec![cache.input.t().dot(g_out), bias_grad(g_out)],
            Some(act) => {
                let g_w2 = act.t().dot(g_out);
                let g_b2 = bias_grad(g_out);
                let mut g_pre = g_out.dot(&self.params[2].t());
                g_pre.zip_mut_with(act, |g, &a| *g *= 1.0 - a * a);
                vec![cache.input.t().dot(&g_pre), bias_grad(&g_pre), g_w2, g_b2]
            }
        }
    }
}
