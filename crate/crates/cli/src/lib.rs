//! Pipeline driver: runs subtitle ingestion through human-rating HIT
//! construction as cached stages with hash manifests.

pub mod config;
pub mod fixture;
pub mod manifest;
pub mod stages;

use std::path::PathBuf;

pub use config::PipelineConfig;
pub use manifest::{Outcome, Workspace};
pub use stages::{Pipeline, Stage};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{} is missing; run `empdial {stage}` first", path.display())]
    MissingArtifact { path: PathBuf, stage: &'static str },
    #[error("hash mismatch for {}: manifest records {expected}, file has {actual}", path.display())]
    HashMismatch {
        path: PathBuf,
        expected: String,
        actual: String,
    },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] empdial_core::Error),
    #[error(transparent)]
    Model(#[from] empdial_model::Error),
    #[error(transparent)]
    Eval(#[from] empdial_eval::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
