//! Cauchy-Schwarz (CS) and generalized Cauchy-Schwarz (GCS) divergence
//! losses for aligning embeddings from two or more modalities.
//!
//! The crate is organized bottom-up:
//!
//! - [`pmf`]: cosine similarities, softmax association PMFs, label-derived
//!   ground-truth PMFs.
//! - [`divergence`]: CS, GCS, Hölder check, and the KL / MMD / CORAL
//!   baselines.
//! - [`losses`]: bi-modal CS loss, circular GCS ring loss, pairwise sums.
//! - [`grad`]: analytic gradients of every loss with respect to the
//!   embeddings, and a central finite-difference oracle.
//! - [`retrieval`]: ranking, P@K and MAP.
//! - [`train`]: synthetic multimodal data, small encoders, Adam training and
//!   the strategy ablation.
//! - [`properties`]: seeded randomized checks of the divergence invariants.

pub mod divergence;
pub mod error;
pub mod grad;
pub mod losses;
pub mod pmf;
pub mod properties;
pub mod retrieval;
pub mod train;

pub use divergence::{
    coral_loss, cs_divergence, gcs_divergence, gcs_divergence_unnormalized, holder_check, kl_alignment,
    mmd_squared, Bandwidth, DivergenceValue, HolderCheck, KlConfig, MmdConfig,
};
pub use error::{Error, Result};
pub use grad::{finite_diff_gradient, loss_gradient, GradientBundle, LossKind};
pub use losses::{
    bimodal_cmpm_cs, gcs_ring_loss, pairwise_sum_loss, ring_projections, LossReport, ModalityRing, PairMeasure,
    RingDirection, Strategy,
};
pub use pmf::{
    association_pmf, build_match_matrix, cosine_similarity_matrix, true_match_pmf, AlignConfig, EmbeddingBatch,
    MatchMatrix, PmfKind, PmfMatrix, SimilarityMatrix,
};
pub use retrieval::{mean_average_precision, precision_at_k, rank_gallery, RetrievalMetrics};
