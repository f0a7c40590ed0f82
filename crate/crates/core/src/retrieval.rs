//! Cross-modal retrieval evaluation: cosine ranking, Precision@K, and mean
//! average precision over the full ranking.

use std::collections::BTreeMap;

use ndarray::{ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::pmf::cosine_matrix;

/// Metrics for one retrieval direction (e.g. `"a2b"`: queries from `a`,
/// gallery from `b`).
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalMetrics {
    pub direction: String,
    pub p_at: BTreeMap<usize, f64>,
    pub map_score: f64,
}

/// For each query row, gallery indices by descending cosine similarity.
/// Ties keep ascending gallery index.
pub fn rank_gallery(query: ArrayView2<'_, f64>, gallery: ArrayView2<'_, f64>) -> Result<Vec<Vec<usize>>> {
    let sims = cosine_matrix(query, gallery)?;
    Ok(sims
        .axis_iter(Axis(0))
        .map(|row| {
            let mut idx: Vec<usize> = (0..row.len()).collect();
            // stable sort: equal similarities stay in index order
            idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
            idx
        })
        .collect())
}

fn check_labels(ranked: &[Vec<usize>], query_labels: &[usize], gallery_labels: &[usize]) -> Result<()> {
    if ranked.len() != query_labels.len() {
        return Err(Error::LengthMismatch { expected: query_labels.len(), got: ranked.len() });
    }
    if let Some(r) = ranked.iter().find(|r| r.len() != gallery_labels.len()) {
        return Err(Error::LengthMismatch { expected: gallery_labels.len(), got: r.len() });
    }
    Ok(())
}

pub fn precision_at_k(ranked: &[Vec<usize>], query_labels: &[usize], gallery_labels: &[usize], k: usize) -> Result<f64> {
    check_labels(ranked, query_labels, gallery_labels)?;
    if k == 0 || k > gallery_labels.len() {
        return Err(Error::BadK { k, gallery: gallery_labels.len() });
    }
    if ranked.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = ranked
        .iter()
        .zip(query_labels)
        .map(|(r, &ql)| r[..k].iter().filter(|&&g| gallery_labels[g] == ql).count() as f64 / k as f64)
        .sum();
    Ok(total / ranked.len() as f64)
}

/// Mean over queries of `(1/R) Σ_{relevant hits at rank r} hits(≤r) / r`.
pub fn mean_average_precision(ranked: &[Vec<usize>], query_labels: &[usize], gallery_labels: &[usize]) -> Result<f64> {
    check_labels(ranked, query_labels, gallery_labels)?;
    if ranked.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (query, (r, &ql)) in ranked.iter().zip(query_labels).enumerate() {
        let mut hits = 0usize;
        let mut ap = 0.0;
        for (pos, &g) in r.iter().enumerate() {
            if gallery_labels[g] == ql {
                hits += 1;
                ap += hits as f64 / (pos + 1) as f64;
            }
        }
        if hits == 0 {
            return Err(Error::NoRelevantItems { query });
        }
        total += ap / hits as f64;
    }
    Ok(total / ranked.len() as f64)
}

/// Ranks `gallery` for every row of `query` and reports P@K for each `k`
/// plus MAP.
pub fn evaluate_direction(
    direction: impl Into<String>,
    query: ArrayView2<'_, f64>,
    query_labels: &[usize],
    gallery: ArrayView2<'_, f64>,
    gallery_labels: &[usize],
    ks: &[usize],
) -> Result<RetrievalMetrics> {
    let ranked = rank_gallery(query, gallery)?;
    let mut p_at = BTreeMap::new();
    for &k in ks {
        p_at.insert(k, precision_at_k(&ranked, query_labels, gallery_labels, k)?);
    }
    Ok(RetrievalMetrics {
        direction: direction.into(),
        p_at,
        map_score: mean_average_precision(&ranked, query_labels, gallery_labels)?,
    })
}
