//! Self-hosted human evaluation: HIT construction with hidden bonus
//! checkpoints, assignment, answer validation, worker filtering and
//! normalised aggregation, served over HTTP.

pub mod aggregate;
pub mod config;
pub mod hits;
pub mod quality;
pub mod server;
pub mod service;

pub use aggregate::{aggregate, AggregateScores, Cell};
pub use config::EvalConfig;
pub use hits::{build_hits, Candidate, CandidateSource, EvalDialog, Hit, Placement, Task};
pub use quality::{filter_assignments, score_bonus, BonusScore, FilterOutcome, RatingAnswer, ScoredAnswer};
pub use service::{AssignOutcome, EvalService, WorkerRecord};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dialog `{dialog}` has no output from model `{model}`")]
    MissingOutput { dialog: String, model: String },
    #[error("{0}")]
    HitLayout(String),
    #[error("unknown assignment `{0}`")]
    UnknownAssignment(String),
    #[error("assignment `{assignment}` belongs to another worker than `{worker}`")]
    WrongWorker { assignment: String, worker: String },
    #[error("assignment `{0}` was already answered")]
    AlreadyAnswered(String),
    #[error("invalid answer: {0}")]
    InvalidAnswer(String),
    #[error("event log: {0}")]
    Log(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
