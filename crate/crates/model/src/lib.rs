//! Emotion-conditioned encoder-decoder dialog model, the separate
//! response-label predictor, their training loops and beam-search decoding.

pub mod bundle;
pub mod config;
pub mod decode;
pub mod generator;
pub mod input;
pub mod layers;
pub mod predictor;
pub mod scoring;
pub mod train;

pub use bundle::{generate, ModelBundle, Provenance, Response};
pub use config::ModelConfig;
pub use decode::{beam_search, BeamOutput, GenerationConfig, StepScorer};
pub use generator::Generator;
pub use input::{build_input, InputEncoding};
pub use predictor::Predictor;
pub use train::{EncodedExample, TrainConfig, TrainReport};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("context must contain at least one utterance")]
    EmptyContext,
    #[error("training set is empty")]
    EmptyDataset,
    #[error("incompatible components: {0}")]
    ManifestMismatch(String),
    #[error(transparent)]
    Core(#[from] empdial_core::Error),
    #[error(transparent)]
    Tensor(#[from] empdial_tensor::TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
