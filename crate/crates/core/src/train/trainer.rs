//! Mini-batch Adam training of per-modality encoders against any of the
//! implemented alignment losses, with held-out retrieval evaluation.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::encoder::Encoder;
use super::optim::{clip_global_norm, Adam, AdamConfig};
use crate::divergence::{Bandwidth, KlConfig};
use crate::error::{Error, Result};
use crate::grad::{loss_gradient, LossKind};
use crate::losses::{direction_label, Strategy};
use crate::pmf::{AlignConfig, EmbeddingBatch};
use crate::retrieval::{evaluate_direction, RetrievalMetrics};

/// Loss family used for training. The ring strategy lives in
/// [`TrainConfig::strategy`] and only affects [`TrainLoss::Gcs`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainLoss {
    Gcs,
    BimodalCs,
    PairwiseCs,
    PairwiseKl,
    Mmd,
    Coral,
}

impl TrainLoss {
    pub fn name(self) -> &'static str {
        match self {
            TrainLoss::Gcs => "gcs",
            TrainLoss::BimodalCs => "bimodal_cs",
            TrainLoss::PairwiseCs => "pairwise_cs",
            TrainLoss::PairwiseKl => "pairwise_kl",
            TrainLoss::Mmd => "mmd",
            TrainLoss::Coral => "coral",
        }
    }
}

impl std::str::FromStr for TrainLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcs" | "gcs_ring" => Ok(TrainLoss::Gcs),
            "cs" | "bimodal_cs" => Ok(TrainLoss::BimodalCs),
            "pairwise_cs" => Ok(TrainLoss::PairwiseCs),
            "kl" | "pairwise_kl" => Ok(TrainLoss::PairwiseKl),
            "mmd" => Ok(TrainLoss::Mmd),
            "coral" => Ok(TrainLoss::Coral),
            other => Err(Error::InvalidConfig(format!("unknown loss {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Multiply the learning rate by `lr_decay_factor` every this many epochs.
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub holdout_fraction: f64,
    pub seed: u64,
    pub loss: TrainLoss,
    pub strategy: Strategy,
    pub temperature: f64,
    /// Width of the optional `tanh` hidden layer; `None` means linear heads.
    pub hidden_dim: Option<usize>,
    pub eval_ks: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            weight_decay: 1e-5,
            grad_clip_norm: 1.0,
            max_epochs: 100,
            batch_size: 64,
            lr_decay_every: 100,
            lr_decay_factor: 0.1,
            holdout_fraction: 0.2,
            seed: 0,
            loss: TrainLoss::Gcs,
            strategy: Strategy::Mixed,
            temperature: 1.0,
            hidden_dim: None,
            eval_ks: vec![1, 10],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let positive = [
            ("adam_epsilon", self.adam_epsilon),
            ("grad_clip_norm", self.grad_clip_norm),
            ("lr_decay_factor", self.lr_decay_factor),
            ("temperature", self.temperature),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be > 0, got {v}"));
            }
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return bad(format!("holdout_fraction must be in (0, 1), got {}", self.holdout_fraction));
        }
        if self.max_epochs == 0 || self.batch_size < 2 || self.lr_decay_every == 0 {
            return bad("max_epochs, lr_decay_every must be >= 1 and batch_size >= 2".into());
        }
        if self.hidden_dim == Some(0) {
            return bad("hidden_dim must be >= 1".into());
        }
        if self.eval_ks.is_empty() || self.eval_ks.contains(&0) {
            return bad("eval_ks needs positive entries".into());
        }
        Ok(())
    }

    pub fn loss_kind(&self) -> LossKind {
        match self.loss {
            TrainLoss::Gcs => LossKind::GcsRing(self.strategy),
            TrainLoss::BimodalCs => LossKind::BimodalCs,
            TrainLoss::PairwiseCs => LossKind::PairwiseCs,
            TrainLoss::PairwiseKl => LossKind::PairwiseKl(KlConfig::default()),
            TrainLoss::Mmd => LossKind::Mmd(Bandwidth::MedianHeuristic),
            TrainLoss::Coral => LossKind::Coral,
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
            weight_decay: self.weight_decay,
        }
    }

    /// Scheduled learning rate for 0-based `epoch`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay_factor.powi((epoch / self.lr_decay_every) as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean mini-batch loss.
    pub loss: f64,
    pub finite: bool,
    pub learning_rate: f64,
    /// Held-out retrieval for every ordered modality pair; empty when the
    /// epoch aborted.
    pub metrics: Vec<RetrievalMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
    /// Epoch at which a non-finite loss stopped the run.
    pub aborted_at: Option<usize>,
}

impl TrainTrace {
    pub fn is_finite(&self) -> bool {
        self.epochs.iter().all(|e| e.finite)
    }

    pub fn final_metrics(&self) -> &[RetrievalMetrics] {
        self.epochs.last().map(|e| e.metrics.as_slice()).unwrap_or(&[])
    }

    pub fn first_loss(&self) -> Option<f64> {
        self.epochs.first().map(|e| e.loss)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }

    /// `Err(NonFiniteLoss)` if the run aborted.
    pub fn check(&self) -> Result<()> {
        match self.aborted_at {
            Some(epoch) => Err(Error::NonFiniteLoss { epoch }),
            None => Ok(()),
        }
    }
}

/// Encoders for `data`, one per modality, initialized from `cfg.seed`.
pub fn init_encoders(data: &[EmbeddingBatch], embed_dim: usize, cfg: &TrainConfig) -> Vec<Encoder> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    data.iter()
        .map(|b| match cfg.hidden_dim {
            Some(h) => Encoder::mlp(b.d(), h, embed_dim, &mut rng),
            None => Encoder::linear(b.d(), embed_dim, &mut rng),
        })
        .collect()
}

/// `(train, held_out)` row indices, shuffled by `seed`.
pub fn split_indices(n: usize, holdout_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = ((n as f64 * holdout_fraction).round() as usize).clamp(1, n - 1);
    let train = idx.split_off(held);
    (train, idx)
}

fn check_inputs(data: &[EmbeddingBatch], encoders: &[Encoder]) -> Result<()> {
    if data.len() < 2 {
        return Err(Error::InvalidConfig(format!("need >= 2 modalities, got {}", data.len())));
    }
    if encoders.len() != data.len() {
        return Err(Error::LengthMismatch { expected: data.len(), got: encoders.len() });
    }
    let d = encoders[0].output_dim();
    for (b, e) in data.iter().zip(encoders) {
        if b.n() != data[0].n() || b.labels() != data[0].labels() {
            return Err(Error::ShapeMismatch(format!("modality {} is not row-aligned with {}", b.modality(), data[0].modality())));
        }
        if e.input_dim() != b.d() || e.output_dim() != d {
            return Err(Error::ShapeMismatch(format!(
                "encoder {}x{} does not fit modality {} (input {}, shared output {d})",
                e.input_dim(),
                e.output_dim(),
                b.modality(),
                b.d()
            )));
        }
    }
    Ok(())
}

fn embed(encoders: &[Encoder], raw: &[EmbeddingBatch]) -> Vec<Array2<f64>> {
    encoders.iter().zip(raw).map(|(e, b)| e.forward(b.data().view()).0).collect()
}

/// Retrieval metrics for every ordered modality pair `a2b`.
pub fn evaluate_all_directions(
    encoders: &[Encoder],
    raw: &[EmbeddingBatch],
    ks: &[usize],
) -> Result<Vec<RetrievalMetrics>> {
    let emb = embed(encoders, raw);
    let labels = raw[0].labels();
    let mut out = Vec::new();
    for a in 0..raw.len() {
        for b in 0..raw.len() {
            if a != b {
                let label = direction_label(raw[a].modality(), raw[b].modality());
                out.push(evaluate_direction(label, emb[a].view(), labels, emb[b].view(), labels, ks)?);
            }
        }
    }
    Ok(out)
}

/// Trains `encoders` in place on the non-held-out rows of `data`.
///
/// Each epoch shuffles the training rows, walks them in mini-batches of
/// `batch_size` (a trailing batch of one row is dropped), clips the global
/// gradient norm and takes one Adam step per batch. Retrieval is evaluated on
/// the held-out rows after every epoch. A non-finite loss stops the run and
/// is reported through [`TrainTrace::aborted_at`].
pub fn train_run(data: &[EmbeddingBatch], encoders: &mut [Encoder], cfg: &TrainConfig) -> Result<TrainTrace> {
    cfg.validate()?;
    check_inputs(data, encoders)?;
    let kind = cfg.loss_kind();
    let align = AlignConfig::new(cfg.temperature)?;
    let (train_idx, test_idx) = split_indices(data[0].n(), cfg.holdout_fraction, cfg.seed);
    let train: Vec<EmbeddingBatch> = data.iter().map(|b| b.select(&train_idx)).collect::<Result<_>>()?;
    let test: Vec<EmbeddingBatch> = data.iter().map(|b| b.select(&test_idx)).collect::<Result<_>>()?;

    let all_params: Vec<Array2<f64>> = encoders.iter().flat_map(|e| e.params().iter().cloned()).collect();
    let mut adam = Adam::new(cfg.adam(), &all_params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(2);
    let batch_size = cfg.batch_size.min(train_idx.len());

    let mut trace = TrainTrace { epochs: Vec::new(), aborted_at: None };
    let mut order: Vec<usize> = (0..train_idx.len()).collect();
    for epoch in 0..cfg.max_epochs {
        let lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut finite = true;
        for chunk in order.chunks(batch_size).filter(|c| c.len() >= 2) {
            let raw: Vec<EmbeddingBatch> = train.iter().map(|b| b.select(chunk)).collect::<Result<_>>()?;
            let mut caches = Vec::with_capacity(raw.len());
            let mut emb = Vec::with_capacity(raw.len());
            for (e, b) in encoders.iter().zip(&raw) {
                let (out, cache) = e.forward(b.data().view());
                emb.push(EmbeddingBatch::new(out, b.labels().to_vec(), b.modality())?);
                caches.push(cache);
            }
            let (loss, g_emb) = loss_gradient(kind, &emb, &align)?;
            if !loss.is_finite() || !g_emb.is_finite() {
                finite = false;
                loss_sum = f64::NAN;
                break;
            }
            loss_sum += loss;
            batches += 1;

            let mut grads: Vec<Array2<f64>> = encoders
                .iter()
                .zip(&caches)
                .zip(&g_emb.per_modality)
                .flat_map(|((e, c), g)| e.backward(c, g))
                .collect();
            clip_global_norm(&mut grads, cfg.grad_clip_norm);
            let mut params: Vec<&mut Array2<f64>> = encoders.iter_mut().flat_map(|e| e.params_mut().iter_mut()).collect();
            adam.step(&mut params, &grads, lr);
        }
        let loss = if batches > 0 { loss_sum / batches as f64 } else { f64::NAN };
        let finite = finite && loss.is_finite();
        let metrics = if finite { evaluate_all_directions(encoders, &test, &cfg.eval_ks)? } else { Vec::new() };
        trace.epochs.push(EpochRecord { epoch: epoch + 1, loss, finite, learning_rate: lr, metrics });
        if !finite {
            trace.aborted_at = Some(epoch + 1);
            break;
        }
    }
    Ok(trace)
}

/// Mean P@K over the given directions (NaN when none report `k`).
pub fn mean_precision(metrics: &[RetrievalMetrics], k: usize) -> f64 {
    let v: Vec<f64> = metrics.iter().filter_map(|m| m.p_at.get(&k).copied()).collect();
    v.iter().sum::<f64>() / v.len() as f64
}
