//! Matching-strategy ablation: the same data, seed and budget trained once
//! per ring strategy.

use std::collections::{BTreeMap, BTreeSet};

use super::trainer::{init_encoders, train_run, TrainConfig, TrainLoss};
use crate::error::Result;
use crate::losses::{direction_label, ring_edges, RingDirection, Strategy};
use crate::pmf::EmbeddingBatch;
use crate::retrieval::RetrievalMetrics;

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionResult {
    pub metrics: RetrievalMetrics,
    /// Whether the strategy's loss contains this direction's ring edge.
    pub supervised: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub strategy: Strategy,
    /// Every ordered modality pair, supervised or not.
    pub directions: Vec<DirectionResult>,
    /// P@K averaged over supervised directions only.
    pub avg_p_at: BTreeMap<usize, f64>,
    pub avg_map: f64,
    pub first_loss: f64,
    pub final_loss: f64,
    pub finite: bool,
}

impl AblationRow {
    pub fn unsupervised(&self) -> impl Iterator<Item = &str> {
        self.directions.iter().filter(|d| !d.supervised).map(|d| d.metrics.direction.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, strategy: Strategy) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.strategy == strategy)
    }
}

/// Direction labels (`src2dst`) a strategy supervises on a ring with the
/// given modality names.
pub fn supervised_directions(names: &[&str], strategy: Strategy) -> BTreeSet<String> {
    [RingDirection::Forward, RingDirection::Backward]
        .into_iter()
        .filter(|&d| strategy.uses(d))
        .flat_map(|d| ring_edges(names.len(), d))
        .map(|(s, t)| direction_label(names[s], names[t]))
        .collect()
}

/// Trains a fresh GCS ring model per strategy with identical data, seeds and
/// budget (taken from `base`, whose loss and strategy are overridden).
pub fn ablation_run(data: &[EmbeddingBatch], embed_dim: usize, base: &TrainConfig) -> Result<AblationTable> {
    let names: Vec<&str> = data.iter().map(|b| b.modality()).collect();
    let mut rows = Vec::new();
    for strategy in Strategy::ALL {
        let cfg = TrainConfig { loss: TrainLoss::Gcs, strategy, ..base.clone() };
        let mut encoders = init_encoders(data, embed_dim, &cfg);
        let trace = train_run(data, &mut encoders, &cfg)?;
        let supervised = supervised_directions(&names, strategy);
        let directions: Vec<DirectionResult> = trace
            .final_metrics()
            .iter()
            .map(|m| DirectionResult { supervised: supervised.contains(&m.direction), metrics: m.clone() })
            .collect();
        let sup: Vec<&RetrievalMetrics> = directions.iter().filter(|d| d.supervised).map(|d| &d.metrics).collect();
        let mean = |f: &dyn Fn(&RetrievalMetrics) -> f64| sup.iter().map(|m| f(m)).sum::<f64>() / sup.len() as f64;
        let avg_p_at = cfg.eval_ks.iter().map(|&k| (k, mean(&|m| m.p_at[&k]))).collect();
        rows.push(AblationRow {
            strategy,
            avg_map: mean(&|m| m.map_score),
            avg_p_at,
            directions,
            first_loss: trace.first_loss().unwrap_or(f64::NAN),
            final_loss: trace.last_loss().unwrap_or(f64::NAN),
            finite: trace.is_finite(),
        });
    }
    Ok(AblationTable { rows })
}
