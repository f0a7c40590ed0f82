//! Desk-scale training: synthetic multimodal data, encoders, Adam, the
//! training loop and the matching-strategy ablation.

pub mod ablation;
pub mod encoder;
pub mod optim;
pub mod synth;
pub mod trainer;

pub use ablation::{ablation_run, AblationRow, AblationTable, DirectionResult};
pub use encoder::Encoder;
pub use optim::{clip_global_norm, Adam, AdamConfig};
pub use synth::{generate_synthetic, modality_name, SynthConfig};
pub use trainer::{
    evaluate_all_directions, init_encoders, mean_precision, split_indices, train_run, EpochRecord, TrainConfig,
    TrainLoss, TrainTrace,
};
