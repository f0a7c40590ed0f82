//! Closed-form divergences between discrete distributions and the
//! sample-based discrepancies used as baselines.
//!
//! | Function | Measure |
//! |----------|---------|
//! | [`cs_divergence`] | `-log( <p,q> / (‖p‖₂ ‖q‖₂) )` |
//! | [`gcs_divergence`] | `-log( Σ_k Π_m p_mk / Π_m (Σ_k p_mk^M)^(1/M) )` |
//! | [`holder_check`] | both sides of Hölder's inequality |
//! | [`kl_alignment`] | `Σ_ij p_ij log(p_ij / (q_ij + ε))` |
//! | [`mmd_squared`] | biased Gaussian-kernel MMD² |
//! | [`coral_loss`] | `‖C_x − C_y‖²_F / 4d²` |
//!
//! CS and GCS return `+∞` rather than an error when the distributions have
//! disjoint support. Their denominators never vanish for a valid PMF: the
//! `M`-th power sum of a PMF over `K` atoms is at least `1 / K^(M-1)`.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::pmf::{check_pmf, PmfMatrix};

/// A CS/GCS value together with the two sides of the ratio inside the log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceValue {
    pub value: f64,
    pub numerator: f64,
    pub denominator: f64,
}

impl DivergenceValue {
    fn from_parts(numerator: f64, denominator: f64) -> Self {
        let value = if numerator > 0.0 { -(numerator / denominator).ln() } else { f64::INFINITY };
        Self { value, numerator, denominator }
    }
}

pub fn cs_divergence(p: &[f64], q: &[f64]) -> Result<DivergenceValue> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch { expected: p.len(), got: q.len() });
    }
    check_pmf(p)?;
    check_pmf(q)?;
    let num: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
    let pp: f64 = p.iter().map(|a| a * a).sum();
    let qq: f64 = q.iter().map(|b| b * b).sum();
    Ok(DivergenceValue::from_parts(num, pp.sqrt() * qq.sqrt()))
}

/// Generalized CS divergence over `M >= 2` PMFs of a common length.
pub fn gcs_divergence(pmfs: &[&[f64]]) -> Result<DivergenceValue> {
    check_sequences(pmfs)?;
    for p in pmfs {
        check_pmf(p)?;
    }
    Ok(gcs_unchecked(pmfs))
}

/// GCS on arbitrary non-negative vectors (not all zero). The value is
/// invariant to multiplying any input by a positive scalar.
pub fn gcs_divergence_unnormalized(seqs: &[&[f64]]) -> Result<DivergenceValue> {
    check_sequences(seqs)?;
    check_non_negative(seqs)?;
    if let Some(m) = seqs.iter().position(|s| s.iter().all(|&v| v == 0.0)) {
        return Err(Error::InvalidConfig(format!("sequence {m} is identically zero")));
    }
    Ok(gcs_unchecked(seqs))
}

fn check_sequences(seqs: &[&[f64]]) -> Result<()> {
    if seqs.len() < 2 {
        return Err(Error::TooFewDistributions(seqs.len()));
    }
    let k = seqs[0].len();
    if let Some(s) = seqs.iter().find(|s| s.len() != k) {
        return Err(Error::LengthMismatch { expected: k, got: s.len() });
    }
    Ok(())
}

fn check_non_negative(seqs: &[&[f64]]) -> Result<()> {
    for (seq, s) in seqs.iter().enumerate() {
        if let Some((index, &value)) = s.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::NegativeEntry { seq, index, value });
        }
    }
    Ok(())
}

// Value is accumulated in log space; numerator and denominator are reported
// as plain products.
fn gcs_unchecked(seqs: &[&[f64]]) -> DivergenceValue {
    let m = seqs.len();
    let k = seqs[0].len();
    let power = m as i32;
    let num: f64 = (0..k).map(|j| seqs.iter().map(|s| s[j]).product::<f64>()).sum();
    let log_norms: f64 = seqs
        .iter()
        .map(|s| s.iter().map(|v| v.powi(power)).sum::<f64>().ln() / m as f64)
        .sum();
    let denominator = log_norms.exp();
    let value = if num > 0.0 { log_norms - num.ln() } else { f64::INFINITY };
    DivergenceValue { value, numerator: num, denominator }
}

/// Both sides of Hölder's inequality for `M` non-negative sequences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `holds` allows a slack of `1e-12 · max(1, rhs)`, so equality cases at
/// large magnitudes are not lost to rounding.
pub fn holder_check(sequences: &[&[f64]]) -> Result<HolderCheck> {
    check_sequences(sequences)?;
    check_non_negative(sequences)?;
    let m = sequences.len();
    let k = sequences[0].len();
    let lhs: f64 = (0..k).map(|j| sequences.iter().map(|s| s[j]).product::<f64>()).sum();
    let rhs: f64 = sequences
        .iter()
        .map(|s| s.iter().map(|v| v.powi(m as i32)).sum::<f64>().powf(1.0 / m as f64))
        .product();
    Ok(HolderCheck { lhs, rhs, holds: lhs <= rhs + 1e-12 * rhs.max(1.0) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlConfig {
    pub epsilon: f64,
}

impl Default for KlConfig {
    fn default() -> Self {
        Self { epsilon: 1e-8 }
    }
}

/// `Σ_j p_j log(p_j / (q_j + ε))` with `0 · log(0 / ·) = 0`.
pub fn kl_row(p: &[f64], q: &[f64], epsilon: f64) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a != 0.0)
        .map(|(&a, &b)| a * (a / (b + epsilon)).ln())
        .sum()
}

pub fn kl_alignment(s_pred: &PmfMatrix, s_true: &PmfMatrix, cfg: &KlConfig) -> Result<f64> {
    if s_pred.rows().dim() != s_true.rows().dim() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            s_pred.rows().dim(),
            s_true.rows().dim()
        )));
    }
    if !(cfg.epsilon >= 0.0) {
        return Err(Error::InvalidConfig(format!("epsilon must be >= 0, got {}", cfg.epsilon)));
    }
    Ok(s_pred
        .rows()
        .axis_iter(Axis(0))
        .zip(s_true.rows().axis_iter(Axis(0)))
        .map(|(p, q)| kl_row(&p.to_vec(), &q.to_vec(), cfg.epsilon))
        .sum())
}

/// Gaussian kernel width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    /// Median pairwise Euclidean distance over the pooled sample.
    MedianHeuristic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmdConfig {
    pub bandwidth: Bandwidth,
}

impl Default for MmdConfig {
    fn default() -> Self {
        Self { bandwidth: Bandwidth::MedianHeuristic }
    }
}

fn check_same_dim(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<()> {
    if x.ncols() != y.ncols() {
        return Err(Error::ShapeMismatch(format!("dims differ: {} vs {}", x.ncols(), y.ncols())));
    }
    if x.nrows() == 0 || y.nrows() == 0 {
        return Err(Error::ShapeMismatch("empty sample".into()));
    }
    Ok(())
}

pub(crate) fn sq_dist(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// Resolves `cfg.bandwidth` to a concrete σ for the pair `(x, y)`.
pub fn resolve_bandwidth(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, cfg: &MmdConfig) -> Result<f64> {
    check_same_dim(x, y)?;
    match cfg.bandwidth {
        Bandwidth::Fixed(s) if s > 0.0 && s.is_finite() => Ok(s),
        Bandwidth::Fixed(s) => Err(Error::InvalidConfig(format!("bandwidth must be > 0, got {s}"))),
        Bandwidth::MedianHeuristic => {
            let pooled: Vec<_> = x.axis_iter(Axis(0)).chain(y.axis_iter(Axis(0))).collect();
            let mut dists = Vec::with_capacity(pooled.len() * (pooled.len() - 1) / 2);
            for i in 0..pooled.len() {
                for j in i + 1..pooled.len() {
                    dists.push(sq_dist(pooled[i], pooled[j]).sqrt());
                }
            }
            dists.sort_by(f64::total_cmp);
            let mid = dists.len() / 2;
            let median = if dists.len() % 2 == 1 { dists[mid] } else { 0.5 * (dists[mid - 1] + dists[mid]) };
            if median > 0.0 {
                Ok(median)
            } else {
                Err(Error::DegenerateBandwidth)
            }
        }
    }
}

pub(crate) fn mmd_with_sigma(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, sigma: f64) -> f64 {
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let mean_kernel = |a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>| {
        let mut total = 0.0;
        for u in a.axis_iter(Axis(0)) {
            for v in b.axis_iter(Axis(0)) {
                total += (-gamma * sq_dist(u, v)).exp();
            }
        }
        total / (a.nrows() * b.nrows()) as f64
    };
    mean_kernel(x, x) + mean_kernel(y, y) - 2.0 * mean_kernel(x, y)
}

/// Biased (V-statistic) estimate of squared MMD with a Gaussian kernel.
pub fn mmd_squared(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, cfg: &MmdConfig) -> Result<f64> {
    let sigma = resolve_bandwidth(x, y, cfg)?;
    Ok(mmd_with_sigma(x, y, sigma))
}

/// Sample covariance of the rows of `x` with `1/(n-1)` normalization, plus
/// the centered data it was computed from.
pub(crate) fn covariance(x: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
    let n = x.nrows();
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let centered = &x - &mean;
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    (cov, centered)
}

pub fn coral_loss(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<f64> {
    check_same_dim(x, y)?;
    for n in [x.nrows(), y.nrows()] {
        if n < 2 {
            return Err(Error::TooFewSamples(n));
        }
    }
    let d = x.ncols() as f64;
    let (cx, _) = covariance(x);
    let (cy, _) = covariance(y);
    let diff = cx - cy;
    Ok(diff.iter().map(|v| v * v).sum::<f64>() / (4.0 * d * d))
}
