//! Embedding network, metric-learning objectives and the trainer.
//!
//! Everything is plain `f64` with hand-written forward and backward passes;
//! matrix products are explicit loops so a row's result never depends on
//! what else is in the batch.

mod checkpoint;
pub mod gradcheck;
mod loss;
mod mining;
mod mlp;
mod norm;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use loss::{arcface_logits, contrastive_loss, softmax_cross_entropy, triplet_loss, ArcFaceHead, ArcFaceStep};
pub use mining::{mine_triplets, MiningStrategy, Triplet};
pub use mlp::{dropout_mask, BatchNorm, Dense, ForwardCache, MlpGrads, MlpParams, MlpShape, Mode};
pub use norm::{fit_norm_stats, normalize, NormMode, NormStats};
pub use train::{embed_table, train, EpochLog, LossKind, TrainConfig, TrainOutcome};

#[derive(Debug, thiserror::Error)]
pub enum LearnError {
    #[error("empty training table")]
    EmptyTable,
    #[error("feature {feature} has zero variance on the training split")]
    ZeroVariance { feature: String },
    #[error("per-sample normalisation undefined for a constant row")]
    ConstantRow,
    #[error("non-finite activation at layer {layer}")]
    NumericFault { layer: usize },
    #[error("batch statistics need at least 2 rows in train mode, got {0}")]
    BatchTooSmall(usize),
    #[error("input has {got} columns, network expects {expected}")]
    InputWidth { expected: usize, got: usize },
    #[error("triplet mining: {0}")]
    Mining(String),
    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
    #[error("invalid training setting `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Identify(#[from] crate::identify::IdentifyError),
    #[error(transparent)]
    Embedding(#[from] crate::embedding::EmbeddingError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
