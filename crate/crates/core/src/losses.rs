//! Batch-level alignment losses.
//!
//! Every directional term compares, for each anchor `i`, the association
//! PMF row `P_i` (cosine + softmax from one modality into another) with the
//! ground-truth row `Q_i` derived from labels, and averages over anchors.
//!
//! * [`bimodal_cmpm_cs`]: CS in both directions of a pair.
//! * [`gcs_ring_loss`]: one GCS term per anchor over the `M` ring projections
//!   plus `Q_i`, forward (`m -> m+1`) and/or backward (`m -> m-1`).
//! * [`pairwise_sum_loss`]: every ordered modality pair, CS or KL.

use std::collections::BTreeMap;

use ndarray::Axis;

use crate::divergence::{kl_row, KlConfig};
use crate::error::{Error, Result};
use crate::pmf::{project, true_match_for, AlignConfig, EmbeddingBatch, PmfMatrix};

/// Which ring paths a circular loss supervises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Clockwise,
    Counterclockwise,
    Mixed,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Clockwise, Strategy::Counterclockwise, Strategy::Mixed];

    pub fn uses(self, dir: RingDirection) -> bool {
        matches!(
            (self, dir),
            (Strategy::Mixed, _)
                | (Strategy::Clockwise, RingDirection::Forward)
                | (Strategy::Counterclockwise, RingDirection::Backward)
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Clockwise => "clockwise",
            Strategy::Counterclockwise => "counterclockwise",
            Strategy::Mixed => "mixed",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "clockwise" | "cw" => Ok(Strategy::Clockwise),
            "counterclockwise" | "ccw" => Ok(Strategy::Counterclockwise),
            "mixed" => Ok(Strategy::Mixed),
            other => Err(Error::InvalidConfig(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RingDirection {
    Forward,
    Backward,
}

impl RingDirection {
    pub fn name(self) -> &'static str {
        match self {
            RingDirection::Forward => "forward",
            RingDirection::Backward => "backward",
        }
    }
}

/// `(src, dst)` modality indices of the ring edges walked in `dir`.
///
/// Forward is `0->1, 1->2, ..., (M-1)->0`. Backward walks the reverse cycle
/// starting at modality 1: `1->0, 0->(M-1), (M-1)->(M-2), ...`.
pub fn ring_edges(m: usize, dir: RingDirection) -> Vec<(usize, usize)> {
    match dir {
        RingDirection::Forward => (0..m).map(|k| (k, (k + 1) % m)).collect(),
        RingDirection::Backward => (0..m)
            .map(|k| {
                let src = (1 + m - k % m) % m;
                (src, (src + m - 1) % m)
            })
            .collect(),
    }
}

pub fn direction_label(src: &str, dst: &str) -> String {
    format!("{src}2{dst}")
}

/// An ordered cycle of paired modality batches.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityRing {
    batches: Vec<EmbeddingBatch>,
    strategy: Strategy,
}

impl ModalityRing {
    pub fn new(batches: Vec<EmbeddingBatch>, strategy: Strategy) -> Result<Self> {
        if batches.len() < 2 {
            return Err(Error::TooFewDistributions(batches.len()));
        }
        let first = &batches[0];
        for b in &batches[1..] {
            if b.n() != first.n() || b.d() != first.d() {
                return Err(Error::ShapeMismatch(format!(
                    "{} is {}x{}, {} is {}x{}",
                    first.modality(),
                    first.n(),
                    first.d(),
                    b.modality(),
                    b.n(),
                    b.d()
                )));
            }
            if b.labels() != first.labels() {
                return Err(Error::InvalidBatch(format!(
                    "labels of {} are not aligned with {}",
                    b.modality(),
                    first.modality()
                )));
            }
        }
        for (i, b) in batches.iter().enumerate() {
            if batches[..i].iter().any(|o| o.modality() == b.modality()) {
                return Err(Error::InvalidBatch(format!("duplicate modality name {:?}", b.modality())));
            }
        }
        Ok(Self { batches, strategy })
    }

    pub fn batches(&self) -> &[EmbeddingBatch] {
        &self.batches
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn with_strategy(&self, strategy: Strategy) -> Self {
        Self { batches: self.batches.clone(), strategy }
    }

    /// Ring starting at modality `k` (same edges, relabelled start).
    pub fn rotated(&self, k: usize) -> Self {
        let mut batches = self.batches.clone();
        let m = batches.len();
        batches.rotate_left(k % m);
        Self { batches, strategy: self.strategy }
    }

    pub fn m(&self) -> usize {
        self.batches.len()
    }

    pub fn n(&self) -> usize {
        self.batches[0].n()
    }

    pub fn edge_label(&self, src: usize, dst: usize) -> String {
        direction_label(self.batches[src].modality(), self.batches[dst].modality())
    }
}

/// Scalar loss with its breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub per_direction: BTreeMap<String, f64>,
    pub per_sample: Vec<f64>,
    pub finite: bool,
}

impl LossReport {
    fn assemble(per_direction: BTreeMap<String, f64>, per_sample: Vec<f64>) -> Self {
        let total = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
        let finite = total.is_finite()
            && per_sample.iter().all(|v| v.is_finite())
            && per_direction.values().all(|v| v.is_finite());
        Self { total, per_direction, per_sample, finite }
    }
}

pub(crate) fn cs_value(p: &[f64], q: &[f64]) -> f64 {
    let num: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
    if num <= 0.0 {
        return f64::INFINITY;
    }
    let pp: f64 = p.iter().map(|a| a * a).sum();
    let qq: f64 = q.iter().map(|b| b * b).sum();
    -(num / (pp.sqrt() * qq.sqrt())).ln()
}

pub(crate) fn gcs_value(rows: &[&[f64]]) -> f64 {
    let m = rows.len();
    let k = rows[0].len();
    let num: f64 = (0..k).map(|j| rows.iter().map(|r| r[j]).product::<f64>()).sum();
    if num <= 0.0 {
        return f64::INFINITY;
    }
    let log_norms: f64 = rows
        .iter()
        .map(|r| r.iter().map(|v| v.powi(m as i32)).sum::<f64>().ln() / m as f64)
        .sum();
    log_norms - num.ln()
}

fn rows_of(p: &PmfMatrix) -> Vec<Vec<f64>> {
    p.rows().axis_iter(Axis(0)).map(|r| r.to_vec()).collect()
}

/// Per-anchor directional terms between an association matrix and `Q`.
fn directional_terms(p: &PmfMatrix, q: &[Vec<f64>], measure: &PairMeasure) -> Vec<f64> {
    rows_of(p)
        .iter()
        .zip(q)
        .map(|(pr, qr)| match measure {
            PairMeasure::Cs => cs_value(pr, qr),
            PairMeasure::Kl(cfg) => kl_row(pr, qr, cfg.epsilon),
        })
        .collect()
}

/// Bidirectional CS projection-matching loss `L_a2b + L_b2a`.
pub fn bimodal_cmpm_cs(a: &EmbeddingBatch, b: &EmbeddingBatch, cfg: &AlignConfig) -> Result<LossReport> {
    let ring = ModalityRing::new(vec![a.clone(), b.clone()], Strategy::Mixed)?;
    pairwise_sum_loss(&ring, cfg, PairMeasure::Cs)
}

/// One association PMF along a ring edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub label: String,
    pub src: usize,
    pub dst: usize,
    pub pmf: PmfMatrix,
}

pub fn ring_projections(ring: &ModalityRing, cfg: &AlignConfig, dir: RingDirection) -> Result<Vec<Projection>> {
    let b = ring.batches();
    ring_edges(ring.m(), dir)
        .into_iter()
        .map(|(src, dst)| {
            Ok(Projection { label: ring.edge_label(src, dst), src, dst, pmf: project(&b[src], &b[dst], cfg)? })
        })
        .collect()
}

/// Circular GCS loss. Each per-anchor term is a GCS over `M + 1`
/// distributions (the `M` projections along the path and `Q_i`).
pub fn gcs_ring_loss(ring: &ModalityRing, cfg: &AlignConfig) -> Result<LossReport> {
    let n = ring.n();
    let q = rows_of(&true_match_for(&ring.batches()[0], &ring.batches()[0])?);
    let mut per_sample = vec![0.0; n];
    let mut per_direction = BTreeMap::new();
    for dir in [RingDirection::Forward, RingDirection::Backward] {
        if !ring.strategy().uses(dir) {
            continue;
        }
        let projections: Vec<Vec<Vec<f64>>> =
            ring_projections(ring, cfg, dir)?.iter().map(|p| rows_of(&p.pmf)).collect();
        let mut dir_sum = 0.0;
        for i in 0..n {
            let mut args: Vec<&[f64]> = projections.iter().map(|p| p[i].as_slice()).collect();
            args.push(&q[i]);
            let v = gcs_value(&args);
            per_sample[i] += v;
            dir_sum += v;
        }
        per_direction.insert(dir.name().to_string(), dir_sum / n as f64);
    }
    Ok(LossReport::assemble(per_direction, per_sample))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PairMeasure {
    Cs,
    Kl(KlConfig),
}

/// Sum of directional projection-matching losses over all `M(M-1)` ordered
/// modality pairs.
pub fn pairwise_sum_loss(ring: &ModalityRing, cfg: &AlignConfig, measure: PairMeasure) -> Result<LossReport> {
    let b = ring.batches();
    let n = ring.n();
    let q = rows_of(&true_match_for(&b[0], &b[0])?);
    let mut per_sample = vec![0.0; n];
    let mut per_direction = BTreeMap::new();
    for src in 0..ring.m() {
        for dst in 0..ring.m() {
            if src == dst {
                continue;
            }
            let terms = directional_terms(&project(&b[src], &b[dst], cfg)?, &q, &measure);
            for (acc, t) in per_sample.iter_mut().zip(&terms) {
                *acc += t;
            }
            per_direction.insert(ring.edge_label(src, dst), terms.iter().sum::<f64>() / n as f64);
        }
    }
    Ok(LossReport::assemble(per_direction, per_sample))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::{cs_divergence, gcs_divergence};
    use crate::pmf::{association_count, reset_association_count};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_ring(m: usize, n: usize, d: usize, classes: usize, seed: u64, strategy: Strategy) -> ModalityRing {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        let batches = (0..m)
            .map(|k| {
                let data = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
                EmbeddingBatch::new(data, labels.clone(), ["i", "t", "a", "v", "m", "x", "y", "z"][k]).unwrap()
            })
            .collect();
        ModalityRing::new(batches, strategy).unwrap()
    }

    fn constant_batch(n: usize, labels: Vec<usize>, name: &str) -> EmbeddingBatch {
        EmbeddingBatch::new(Array2::from_elem((n, 2), 1.0), labels, name).unwrap()
    }

    #[test]
    fn edges_match_the_three_modality_layout() {
        assert_eq!(ring_edges(3, RingDirection::Forward), vec![(0, 1), (1, 2), (2, 0)]);
        assert_eq!(ring_edges(3, RingDirection::Backward), vec![(1, 0), (0, 2), (2, 1)]);
        assert_eq!(ring_edges(2, RingDirection::Forward), vec![(0, 1), (1, 0)]);
        assert_eq!(ring_edges(2, RingDirection::Backward), vec![(1, 0), (0, 1)]);
    }

    #[test]
    fn projection_labels() {
        let ring = random_ring(3, 4, 2, 2, 1, Strategy::Mixed);
        let cfg = AlignConfig::default();
        let fwd: Vec<_> = ring_projections(&ring, &cfg, RingDirection::Forward).unwrap().into_iter().map(|p| p.label).collect();
        let bwd: Vec<_> = ring_projections(&ring, &cfg, RingDirection::Backward).unwrap().into_iter().map(|p| p.label).collect();
        assert_eq!(fwd, ["i2t", "t2a", "a2i"]);
        assert_eq!(bwd, ["t2i", "i2a", "a2t"]);

        let pair = random_ring(2, 4, 2, 2, 1, Strategy::Mixed);
        let mut fwd: Vec<_> = ring_projections(&pair, &cfg, RingDirection::Forward).unwrap().into_iter().map(|p| p.label).collect();
        let mut bwd: Vec<_> = ring_projections(&pair, &cfg, RingDirection::Backward).unwrap().into_iter().map(|p| p.label).collect();
        fwd.sort();
        bwd.sort();
        assert_eq!(fwd, ["i2t", "t2i"]);
        assert_eq!(fwd, bwd);
    }

    #[test]
    fn ring_validation() {
        let a = constant_batch(3, vec![0, 1, 2], "a");
        assert!(ModalityRing::new(vec![a.clone()], Strategy::Mixed).is_err());
        let b = constant_batch(3, vec![0, 2, 1], "b");
        assert!(matches!(ModalityRing::new(vec![a.clone(), b], Strategy::Mixed), Err(Error::InvalidBatch(_))));
        let c = constant_batch(4, vec![0, 1, 2, 3], "c");
        assert!(matches!(ModalityRing::new(vec![a.clone(), c], Strategy::Mixed), Err(Error::ShapeMismatch(_))));
        assert!(ModalityRing::new(vec![a.clone(), a], Strategy::Mixed).is_err());
    }

    #[test]
    fn bimodal_zero_at_equality() {
        let a = EmbeddingBatch::new(Array2::from_elem((4, 3), 0.7), vec![5; 4], "a").unwrap();
        let b = EmbeddingBatch::new(Array2::from_elem((4, 3), 2.0), vec![5; 4], "b").unwrap();
        let r = bimodal_cmpm_cs(&a, &b, &AlignConfig::default()).unwrap();
        assert_abs_diff_eq!(r.total, 0.0, epsilon = 1e-9);
        assert!(r.finite);
    }

    #[test]
    fn bimodal_uniform_rows_against_one_hot() {
        let a = constant_batch(2, vec![0, 1], "a");
        let b = constant_batch(2, vec![0, 1], "b");
        let r = bimodal_cmpm_cs(&a, &b, &AlignConfig::default()).unwrap();
        let half_ln2 = cs_divergence(&[0.5, 0.5], &[1.0, 0.0]).unwrap().value;
        assert_abs_diff_eq!(half_ln2, 0.5 * std::f64::consts::LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(r.per_direction["a2b"], half_ln2, epsilon = 1e-15);
        assert_abs_diff_eq!(r.per_direction["b2a"], half_ln2, epsilon = 1e-15);
        assert_eq!(r.per_direction.len(), 2);
        assert_abs_diff_eq!(r.total, r.per_direction.values().sum::<f64>(), epsilon = 1e-12);
    }

    #[test]
    fn bimodal_total_is_sum_of_directions() {
        for seed in 0..10 {
            let ring = random_ring(2, 8, 3, 3, seed, Strategy::Mixed);
            let r = bimodal_cmpm_cs(&ring.batches()[0], &ring.batches()[1], &AlignConfig::default()).unwrap();
            assert_abs_diff_eq!(r.total, r.per_direction.values().sum::<f64>(), epsilon = 1e-12);
            let mean: f64 = r.per_sample.iter().sum::<f64>() / 8.0;
            assert_abs_diff_eq!(r.total, mean, epsilon = 1e-9);
        }
    }

    #[test]
    fn gcs_ring_uniform_rows_one_hot_truth() {
        let labels = vec![0, 1, 2, 3];
        let batches = ["i", "t", "a"].iter().map(|n| constant_batch(4, labels.clone(), n)).collect();
        let ring = ModalityRing::new(batches, Strategy::Clockwise).unwrap();
        let r = gcs_ring_loss(&ring, &AlignConfig::default()).unwrap();
        // numerator (1/4)^3 = 1/64; uniform norm factors (1/64)^(1/4); one-hot factor 1
        let num: f64 = 1.0 / 64.0;
        let den: f64 = (1.0f64 / 64.0).powf(0.75);
        let hand = -(num / den).ln();
        assert_abs_diff_eq!(hand, 0.75 * 4f64.ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(r.per_direction["forward"], hand, epsilon = 1e-12);
        assert_abs_diff_eq!(r.total, 1.0397207708399179, epsilon = 1e-12);
        for v in &r.per_sample {
            assert_abs_diff_eq!(*v, hand, epsilon = 1e-12);
        }
    }

    #[test]
    fn gcs_ring_zero_when_everything_agrees() {
        let batches = ["i", "t", "a"]
            .iter()
            .map(|n| EmbeddingBatch::new(array![[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]], vec![1, 1, 1], *n).unwrap())
            .collect();
        let ring = ModalityRing::new(batches, Strategy::Mixed).unwrap();
        assert_abs_diff_eq!(gcs_ring_loss(&ring, &AlignConfig::default()).unwrap().total, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn ring_term_matches_public_gcs() {
        let ring = random_ring(3, 6, 4, 2, 11, Strategy::Clockwise);
        let cfg = AlignConfig::default();
        let r = gcs_ring_loss(&ring, &cfg).unwrap();
        let proj = ring_projections(&ring, &cfg, RingDirection::Forward).unwrap();
        let q = true_match_for(&ring.batches()[0], &ring.batches()[0]).unwrap();
        for i in 0..6 {
            let rows: Vec<Vec<f64>> = proj.iter().map(|p| p.pmf.row(i).to_vec()).chain([q.row(i).to_vec()]).collect();
            let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
            assert_abs_diff_eq!(r.per_sample[i], gcs_divergence(&refs).unwrap().value, epsilon = 1e-12);
        }
    }

    #[test]
    fn mixed_is_clockwise_plus_counterclockwise() {
        let cfg = AlignConfig::default();
        for seed in 0..10 {
            let ring = random_ring(3 + (seed as usize % 3), 8, 4, 3, seed, Strategy::Mixed);
            let mixed = gcs_ring_loss(&ring, &cfg).unwrap().total;
            let cw = gcs_ring_loss(&ring.with_strategy(Strategy::Clockwise), &cfg).unwrap().total;
            let ccw = gcs_ring_loss(&ring.with_strategy(Strategy::Counterclockwise), &cfg).unwrap().total;
            assert_abs_diff_eq!(mixed, cw + ccw, epsilon = 1e-12);
        }
    }

    #[test]
    fn mixed_total_is_rotation_invariant() {
        let cfg = AlignConfig::default();
        for seed in 0..5 {
            let ring = random_ring(4, 8, 3, 4, seed, Strategy::Mixed);
            let base = gcs_ring_loss(&ring, &cfg).unwrap().total;
            for k in 1..4 {
                assert_abs_diff_eq!(gcs_ring_loss(&ring.rotated(k), &cfg).unwrap().total, base, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn pairwise_reduces_to_bimodal() {
        let ring = random_ring(2, 6, 3, 2, 3, Strategy::Mixed);
        let cfg = AlignConfig::default();
        let pair = pairwise_sum_loss(&ring, &cfg, PairMeasure::Cs).unwrap();
        let bi = bimodal_cmpm_cs(&ring.batches()[0], &ring.batches()[1], &cfg).unwrap();
        assert_abs_diff_eq!(pair.total, bi.total, epsilon = 1e-15);
    }

    #[test]
    fn construction_counts() {
        let cfg = AlignConfig::default();
        let ring = random_ring(3, 4, 2, 2, 0, Strategy::Mixed);
        let r = pairwise_sum_loss(&ring, &cfg, PairMeasure::Kl(KlConfig::default())).unwrap();
        assert_eq!(r.per_direction.len(), 6);
        for m in 2..=8 {
            let ring = random_ring(m, 4, 2, 2, m as u64, Strategy::Mixed);
            reset_association_count();
            gcs_ring_loss(&ring, &cfg).unwrap();
            assert_eq!(association_count(), 2 * m as u64);
            reset_association_count();
            pairwise_sum_loss(&ring, &cfg, PairMeasure::Cs).unwrap();
            assert_eq!(association_count(), (m * (m - 1)) as u64);
        }
    }

    #[test]
    fn losses_are_non_negative_and_finite() {
        let cfg = AlignConfig { temperature: 0.1 };
        for seed in 0..20 {
            let ring = random_ring(2 + seed as usize % 4, 10, 5, 3, seed, Strategy::Mixed);
            for r in [
                gcs_ring_loss(&ring, &cfg).unwrap(),
                pairwise_sum_loss(&ring, &cfg, PairMeasure::Cs).unwrap(),
                pairwise_sum_loss(&ring, &cfg, PairMeasure::Kl(KlConfig::default())).unwrap(),
            ] {
                assert!(r.finite);
                assert!(r.total >= -1e-12);
            }
        }
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("Mixed".parse::<Strategy>().unwrap(), Strategy::Mixed);
        assert_eq!("ccw".parse::<Strategy>().unwrap(), Strategy::Counterclockwise);
        assert!("sideways".parse::<Strategy>().is_err());
    }
}
