//! Similarity matrices and the two row-stochastic matrices every loss is
//! built from: softmax association probabilities and label-derived
//! ground-truth matching probabilities.

use std::cell::Cell;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Rows with a Euclidean norm below this are rejected by cosine similarity.
pub const MIN_ROW_NORM: f64 = 1e-30;

/// Row-sum tolerance applied to PMFs handed in from outside the crate.
pub const PMF_SUM_TOLERANCE: f64 = 1e-6;

/// One modality's embeddings for a batch of instances.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    data: Array2<f64>,
    labels: Vec<usize>,
    modality: String,
}

impl EmbeddingBatch {
    pub fn new(data: Array2<f64>, labels: Vec<usize>, modality: impl Into<String>) -> Result<Self> {
        let (n, d) = data.dim();
        if n < 2 {
            return Err(Error::InvalidBatch(format!("need n >= 2 rows, got {n}")));
        }
        if d < 1 {
            return Err(Error::InvalidBatch("need d >= 1 columns".into()));
        }
        if labels.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: labels.len() });
        }
        if let Some((i, _)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidBatch(format!("non-finite entry at row {}", i / d)));
        }
        for (row, r) in data.axis_iter(Axis(0)).enumerate() {
            if norm(r) < MIN_ROW_NORM {
                return Err(Error::ZeroNormRow { row });
            }
        }
        Ok(Self { data, labels, modality: modality.into() })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn modality(&self) -> &str {
        &self.modality
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn d(&self) -> usize {
        self.data.ncols()
    }

    /// Same labels and modality name, new coordinates (re-validated).
    pub fn with_data(&self, data: Array2<f64>) -> Result<Self> {
        Self::new(data, self.labels.clone(), self.modality.clone())
    }

    /// Rows selected by `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let data = self.data.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::new(data, labels, self.modality.clone())
    }
}

/// Pairwise cosine similarities between the rows of two batches.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub values: Array2<f64>,
    pub row_modality: String,
    pub col_modality: String,
}

/// Binary matching indicator: `values[i][j]` is true when row instance `i`
/// and column instance `j` share a label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchMatrix {
    values: Array2<bool>,
}

impl MatchMatrix {
    pub fn values(&self) -> &Array2<bool> {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmfKind {
    Association,
    TrueMatch,
}

/// Row-stochastic matrix; row `i` is a PMF over the columns of the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PmfMatrix {
    rows: Array2<f64>,
    kind: PmfKind,
}

impl PmfMatrix {
    /// Validates non-negativity and row sums (within [`PMF_SUM_TOLERANCE`]).
    /// No renormalization is performed.
    pub fn new(rows: Array2<f64>, kind: PmfKind) -> Result<Self> {
        for (i, r) in rows.axis_iter(Axis(0)).enumerate() {
            check_pmf(&r.to_vec()).map_err(|e| match e {
                    Error::NotAPmf(msg) => Error::NotAPmf(format!("row {i}: {msg}")),
                    other => other,
                })?;
        }
        Ok(Self { rows, kind })
    }

    pub(crate) fn from_trusted(rows: Array2<f64>, kind: PmfKind) -> Self {
        Self { rows, kind }
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.rows.row(i)
    }

    pub fn kind(&self) -> PmfKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }
}

/// Softmax temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignConfig {
    pub temperature: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self { temperature: 1.0 }
    }
}

impl AlignConfig {
    pub fn new(temperature: f64) -> Result<Self> {
        let cfg = Self { temperature };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperature > 0.0 && self.temperature.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("temperature must be > 0, got {}", self.temperature)))
        }
    }
}

thread_local! {
    static ASSOCIATION_BUILDS: Cell<u64> = const { Cell::new(0) };
}

/// Number of association PMF matrices built on the current thread since the
/// last [`reset_association_count`].
pub fn association_count() -> u64 {
    ASSOCIATION_BUILDS.with(|c| c.get())
}

pub fn reset_association_count() {
    ASSOCIATION_BUILDS.with(|c| c.set(0));
}

pub(crate) fn norm(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}

pub(crate) fn check_pmf(p: &[f64]) -> Result<()> {
    if let Some((j, &v)) = p.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::NotAPmf(format!("entry {j} = {v} is negative or non-finite")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > PMF_SUM_TOLERANCE {
        return Err(Error::NotAPmf(format!("sums to {s}")));
    }
    Ok(())
}

/// Cosine similarity between every row of `a` and every row of `b`. Row
/// counts may differ; column counts may not.
pub fn cosine_matrix(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "embedding dims differ: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let a_hat = unit_rows(a)?;
    let b_hat = unit_rows(b)?;
    let mut s = a_hat.dot(&b_hat.t());
    s.mapv_inplace(|v| v.clamp(-1.0, 1.0));
    Ok(s)
}

pub(crate) fn unit_rows(x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let mut out = x.to_owned();
    for (row, mut r) in out.axis_iter_mut(Axis(0)).enumerate() {
        let nrm = norm(r.view());
        if !(nrm >= MIN_ROW_NORM) {
            return Err(Error::ZeroNormRow { row });
        }
        r.mapv_inplace(|v| v / nrm);
    }
    Ok(out)
}

pub fn cosine_similarity_matrix(a: &EmbeddingBatch, b: &EmbeddingBatch) -> Result<SimilarityMatrix> {
    if a.n() != b.n() || a.d() != b.d() {
        return Err(Error::ShapeMismatch(format!(
            "{}: {}x{} vs {}: {}x{}",
            a.modality(),
            a.n(),
            a.d(),
            b.modality(),
            b.n(),
            b.d()
        )));
    }
    Ok(SimilarityMatrix {
        values: cosine_matrix(a.data().view(), b.data().view())?,
        row_modality: a.modality().to_string(),
        col_modality: b.modality().to_string(),
    })
}

/// Row-wise softmax of `sim / temperature` with max subtraction.
///
/// Entries that would underflow to zero are floored at `f64::MIN_POSITIVE`
/// so that association rows stay strictly positive.
pub fn association_pmf(sim: &SimilarityMatrix, cfg: &AlignConfig) -> Result<PmfMatrix> {
    cfg.validate()?;
    let s = &sim.values;
    if s.nrows() != s.ncols() {
        return Err(Error::ShapeMismatch(format!("similarity matrix is {}x{}", s.nrows(), s.ncols())));
    }
    let rows = softmax_rows(s.view(), cfg.temperature)?;
    ASSOCIATION_BUILDS.with(|c| c.set(c.get() + 1));
    Ok(PmfMatrix::from_trusted(rows, PmfKind::Association))
}

pub(crate) fn softmax_rows(s: ArrayView2<'_, f64>, temperature: f64) -> Result<Array2<f64>> {
    let mut out = Array2::zeros(s.dim());
    for (i, (src, mut dst)) in s.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))).enumerate() {
        if let Some(j) = src.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSimilarity { row: i, col: j });
        }
        let max = src.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / temperature));
        let mut total = 0.0;
        for (d, &v) in dst.iter_mut().zip(src.iter()) {
            *d = (v / temperature - max).exp();
            total += *d;
        }
        dst.mapv_inplace(|v| (v / total).max(f64::MIN_POSITIVE));
    }
    Ok(out)
}

pub fn build_match_matrix(row_labels: &[usize], col_labels: &[usize]) -> Result<MatchMatrix> {
    if row_labels.len() != col_labels.len() {
        return Err(Error::LengthMismatch { expected: row_labels.len(), got: col_labels.len() });
    }
    let n = row_labels.len();
    let values = Array2::from_shape_fn((n, n), |(i, j)| row_labels[i] == col_labels[j]);
    if let Some(row) = values.axis_iter(Axis(0)).position(|r| !r.iter().any(|&m| m)) {
        return Err(Error::EmptyMatchRow { row });
    }
    Ok(MatchMatrix { values })
}

/// `q[i][j] = y[i][j] / sum_k y[i][k]`.
pub fn true_match_pmf(matches: &MatchMatrix) -> Result<PmfMatrix> {
    let y = &matches.values;
    let mut rows = Array2::zeros(y.dim());
    for (i, (src, mut dst)) in y.axis_iter(Axis(0)).zip(rows.axis_iter_mut(Axis(0))).enumerate() {
        let count = src.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::EmptyMatchRow { row: i });
        }
        let w = 1.0 / count as f64;
        for (d, &m) in dst.iter_mut().zip(src.iter()) {
            *d = if m { w } else { 0.0 };
        }
    }
    Ok(PmfMatrix::from_trusted(rows, PmfKind::TrueMatch))
}

/// Ground-truth PMF for two batches' labels.
pub fn true_match_for(rows: &EmbeddingBatch, cols: &EmbeddingBatch) -> Result<PmfMatrix> {
    true_match_pmf(&build_match_matrix(rows.labels(), cols.labels())?)
}

/// Cosine followed by softmax: the association PMF from `a` to `b`.
pub fn project(a: &EmbeddingBatch, b: &EmbeddingBatch, cfg: &AlignConfig) -> Result<PmfMatrix> {
    association_pmf(&cosine_similarity_matrix(a, b)?, cfg)
}
