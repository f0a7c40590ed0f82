use thiserror::Error;

/// Errors raised by batch construction, divergences, losses and evaluation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("row {row} has (near) zero norm")]
    ZeroNormRow { row: usize },

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("non-finite similarity at ({row}, {col})")]
    NonFiniteSimilarity { row: usize, col: usize },

    #[error("row {row} has no matching column")]
    EmptyMatchRow { row: usize },

    #[error("not a PMF: {0}")]
    NotAPmf(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("need at least 2 distributions, got {0}")]
    TooFewDistributions(usize),

    #[error("negative entry {value} at sequence {seq}, index {index}")]
    NegativeEntry { seq: usize, index: usize, value: f64 },

    #[error("degenerate kernel bandwidth (median pairwise distance is 0)")]
    DegenerateBandwidth,

    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("k = {k} out of range for gallery of size {gallery}")]
    BadK { k: usize, gallery: usize },

    #[error("query {query} has no relevant gallery item")]
    NoRelevantItems { query: usize },

    #[error("loss is non-finite at a perturbed point (coordinate {coord})")]
    NonFinitePerturbation { coord: usize },

    #[error("training loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
