//! Corpus construction and scoring for empathetic dialog data: subtitle
//! parsing, turn segmentation, dialog cleaning, emotion/intent
//! classification, top-k selection, tokenization and evaluation metrics.

pub mod classifier;
pub mod corpus;
pub mod curation;
pub mod dialog;
mod error;
pub mod labels;
pub mod lexicon;
pub mod metrics;
pub mod records;
pub mod segment;
pub mod subtitle;
pub mod tokenizer;
pub mod topk;

pub use error::{Error, Result};
pub use labels::{EmotionDistribution, LabelSet, Role, NUM_LABELS};

use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 of `bytes`.
pub fn fingerprint(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Fingerprint of a file's contents.
pub fn file_fingerprint(path: &std::path::Path) -> Result<String> {
    Ok(fingerprint(&std::fs::read(path)?))
}
