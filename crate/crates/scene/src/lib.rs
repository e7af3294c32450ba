//! Synthetic layered scenes with exhaustive pairwise occlusion and distance
//! labels, and the dataset directory format used for training and evaluation.

use std::path::{Path, PathBuf};

use thiserror::Error;

mod config;
pub mod dataset;
mod render;
mod scene;

pub use config::GenConfig;
pub use dataset::{load_dataset, synthesize, Dataset, ImageRecord, Split, SCHEMA_VERSION};
pub use render::{render, RgbImage};
pub use scene::{distance_class, generate_scene, Owner, Part, Rect, Scene, SceneObject};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("object {0} has no parts")]
    NoParts(usize),
    #[error("object {object} has an empty or out-of-image part {rect:?}")]
    BadPart { object: usize, rect: Rect },
    #[error("object {object} has non-positive depth {depth}")]
    BadDepth { object: usize, depth: f64 },
    #[error("depth {0} is used by more than one part")]
    DuplicateDepth(f64),
    #[error("no acceptable layout for seed {seed} after {attempts} attempts")]
    Exhausted { seed: u64, attempts: usize },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Png { path: PathBuf, message: String },
    #[error("annotations line {line}, column {column}: {source}")]
    Json { line: usize, column: usize, source: serde_json::Error },
    #[error("annotations line {line}: schema version {found:?}, expected {expected}")]
    Schema { line: usize, found: Option<u64>, expected: u32 },
    #[error("annotations line {line}: {message}")]
    Record { line: usize, message: String },
}

impl SceneError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        SceneError::Io { path: path.to_path_buf(), source }
    }
}
