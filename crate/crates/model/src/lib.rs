//! Three-decoder set-prediction transformer for relative occlusion and
//! relative distance, with a small reverse-mode tape, checkpointing and the
//! training loop.

use ndarray::{LinalgScalar, ScalarOperand};
use occlu_core::Scalar;
use thiserror::Error;

pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod network;
pub mod optim;
pub mod params;
pub mod tape;
pub mod train;

pub use config::ModelConfig;
pub use network::{positional_encoding, AttentionRecord, DecoderKind, ImageBatch, Model, Outputs};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use train::{train, Sample, TrainConfig};

/// Scalar usable by the tape: `f32` or `f64`.
pub trait Real: Scalar + LinalgScalar + ScalarOperand {}

impl<T: Scalar + LinalgScalar + ScalarOperand> Real for T {}

pub type Model32 = Model<f32>;
pub type Model64 = Model<f64>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("training diverged at {0}")]
    Diverged(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Data(#[from] occlu_scene::SceneError),
    #[error(transparent)]
    Matching(#[from] occlu_core::MatchingError),
    #[error(transparent)]
    Inference(#[from] occlu_core::inference::InferenceError),
    #[error(transparent)]
    Eval(#[from] occlu_core::evaluation::EvalError),
}
