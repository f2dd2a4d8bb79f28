//! Directory-level ingestion: subtitle files in, segmented turn records out.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::records::TurnRecord;
use crate::segment::{extract_pair_features, segment_turns, SegmenterModel, TurnPairFeatures};
use crate::subtitle::{parse_subtitle_file, SubtitleLine};
use crate::{Error, Result};

/// Every regular file under `root`, keyed by its `/`-separated relative path
/// and sorted by that key.
pub fn list_documents(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut docs = Vec::new();
    for entry in WalkDir::new(root).follow_links(true) {
        let entry = entry.map_err(|e| Error::Io(e.into()))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(root).expect("walk stays under root");
        let id = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        docs.push((id, entry.path().to_path_buf()));
    }
    docs.sort();
    Ok(docs)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IngestOutput {
    pub turns: Vec<TurnRecord>,
    pub documents: usize,
    pub lines: usize,
    pub skipped_cues: usize,
    /// Documents that produced no usable cue, with the parse error.
    pub failed: Vec<(String, String)>,
}

struct DocResult {
    id: String,
    lines: usize,
    skipped: usize,
    outcome: std::result::Result<Vec<TurnRecord>, String>,
}

fn ingest_one(id: &str, path: &Path, model: &SegmenterModel) -> DocResult {
    let parsed = std::fs::read(path)
        .map_err(Error::from)
        .and_then(|raw| parse_subtitle_file(&raw, id));
    match parsed {
        Ok(p) => {
            let turns = segment_turns(&p.lines, model);
            DocResult {
                id: id.to_string(),
                lines: p.lines.len(),
                skipped: p.skipped,
                outcome: Ok(TurnRecord::from_turns(id, &turns)),
            }
        }
        Err(e) => DocResult {
            id: id.to_string(),
            lines: 0,
            skipped: 0,
            outcome: Err(e.to_string()),
        },
    }
}

/// Parses and segments documents in parallel; output order is by doc_id
/// regardless of scheduling.
pub fn ingest_documents(docs: &[(String, PathBuf)], model: &SegmenterModel) -> IngestOutput {
    let mut results: Vec<DocResult> = docs.par_iter().map(|(id, p)| ingest_one(id, p, model)).collect();
    results.sort_by(|a, b| a.id.cmp(&b.id));
    let mut out = IngestOutput {
        documents: results.len(),
        ..Default::default()
    };
    for r in results {
        out.lines += r.lines;
        out.skipped_cues += r.skipped;
        match r.outcome {
            Ok(turns) => out.turns.extend(turns),
            Err(e) => {
                log::warn!("{}: {e}", r.id);
                out.failed.push((r.id, e));
            }
        }
    }
    out
}

/// One hand-labelled adjacent line pair for segmenter training.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelledPair {
    pub prev: SubtitleLine,
    pub next: SubtitleLine,
    pub same_turn: bool,
}

impl LabelledPair {
    pub fn features(&self) -> (TurnPairFeatures, bool) {
        (extract_pair_features(&self.prev, &self.next), self.same_turn)
    }
}

pub fn save_segmenter(model: &SegmenterModel, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(model)?)?;
    Ok(())
}

pub fn load_segmenter(path: &Path) -> Result<SegmenterModel> {
    let m: SegmenterModel = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if m.weights.len() != crate::segment::NUM_FEATURES {
        return Err(Error::Invalid(format!(
            "segmenter has {} weights, expected {}",
            m.weights.len(),
            crate::segment::NUM_FEATURES
        )));
    }
    Ok(m)
}
