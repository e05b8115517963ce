//! Learned descriptor fusion: self-attention over the (global, masked,
//! bbox) tokens followed by an MLP predicting per-dimension softmax weights.

mod check;
mod checkpoint;
mod net;
mod params;
mod train;

use thiserror::Error;

pub use check::{gradient_check, relative_error, GradCheck, GRAD_CHECK_FLOOR};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointError, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use net::{merger_backward, merger_backward_acc, merger_forward, merger_loss, MergerOutput, LAYER_NORM_EPS};
pub use params::{
    BlockOffsets, Layout, LayerOffsets, MergerParams, ATTENTION_BLOCKS, ATTENTION_INIT_GAIN, MLP_LAYERS, TOKENS,
};
pub use train::{mean_loss, train_from, train_merger, TrainConfig, TrainReport, TrainSample};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MergerError {
    #[error("degenerate merged descriptor (norm {0:e})")]
    Degenerate(f64),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("expected {expected} parameters, got {actual}")]
    ParamCount { expected: usize, actual: usize },
    #[error("non-finite parameter or activation")]
    NonFinite,
    #[error("empty training set")]
    EmptyDataset,
    #[error("non-finite training loss {loss} at epoch {epoch}, batch {step}")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f64 },
}
