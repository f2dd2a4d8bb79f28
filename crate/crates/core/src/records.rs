//! Line-delimited JSON record files shared by the pipeline stages.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dialog::{split_into_dialogs, Dialog};
use crate::segment::Turn;
use crate::{Error, Result};

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, records: impl IntoIterator<Item = &'a T>) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// One segmented turn of a document.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub doc_id: String,
    pub turn_index: usize,
    pub start_ms: Option<u64>,
    pub end_ms: Option<u64>,
    pub text: String,
}

impl TurnRecord {
    pub fn from_turns(doc_id: &str, turns: &[Turn]) -> Vec<Self> {
        turns
            .iter()
            .enumerate()
            .map(|(i, t)| Self {
                doc_id: doc_id.to_string(),
                turn_index: i,
                start_ms: t.start_ms,
                end_ms: t.end_ms,
                text: t.text.clone(),
            })
            .collect()
    }
}

/// Groups turn records by document (sorted by doc_id, then turn_index) and
/// cuts each document into dialogs.
pub fn dialogs_from_turn_records(mut records: Vec<TurnRecord>) -> Vec<Dialog> {
    records.sort_by(|a, b| a.doc_id.cmp(&b.doc_id).then(a.turn_index.cmp(&b.turn_index)));
    let mut dialogs = Vec::new();
    let mut i = 0;
    while i < records.len() {
        let doc = records[i].doc_id.clone();
        let mut turns = Vec::new();
        while i < records.len() && records[i].doc_id == doc {
            let r = &records[i];
            turns.push(Turn {
                text: r.text.clone(),
                start_ms: r.start_ms,
                end_ms: r.end_ms,
            });
            i += 1;
        }
        dialogs.extend(split_into_dialogs(&doc, turns));
    }
    dialogs
}

/// A context/response pair with the response's gold label index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub context: Vec<String>,
    pub response: String,
    pub e_y: usize,
}

/// Every turn after the first becomes a response to the turns before it.
pub fn examples_from_dialog(dialog: &Dialog, label_of: impl Fn(&str) -> usize) -> Vec<TrainingExample> {
    let texts: Vec<&str> = dialog.texts().collect();
    (1..texts.len())
        .map(|j| TrainingExample {
            context: texts[..j].iter().map(|s| s.to_string()).collect(),
            response: texts[j].to_string(),
            e_y: label_of(texts[j]),
        })
        .collect()
}

/// Uses the whole dialog: the last turn is the response.
pub fn final_turn_example(dialog: &Dialog, label_of: impl Fn(&str) -> usize) -> Option<TrainingExample> {
    let texts: Vec<&str> = dialog.texts().collect();
    let (last, ctx) = texts.split_last()?;
    if ctx.is_empty() {
        return None;
    }
    Some(TrainingExample {
        context: ctx.iter().map(|s| s.to_string()).collect(),
        response: last.to_string(),
        e_y: label_of(last),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nested/t.jsonl");
        let recs = vec![
            TurnRecord { doc_id: "a".into(), turn_index: 0, start_ms: Some(1), end_ms: None, text: "hi".into() },
            TurnRecord { doc_id: "a".into(), turn_index: 1, start_ms: None, end_ms: None, text: "yo".into() },
        ];
        write_jsonl(&p, &recs).unwrap();
        let raw = std::fs::read_to_string(&p).unwrap();
        assert!(raw.contains("\"end_ms\":null"));
        assert_eq!(read_jsonl::<TurnRecord>(&p).unwrap(), recs);
        std::fs::write(&p, format!("{raw}{{broken\n")).unwrap();
        let err = read_jsonl::<TurnRecord>(&p).unwrap_err();
        assert!(matches!(err, Error::Record { line: 3, .. }));
    }

    #[test]
    fn grouping_sorts_and_splits() {
        let rec = |doc: &str, i, s| TurnRecord { doc_id: doc.into(), turn_index: i, start_ms: Some(s), end_ms: Some(s + 100), text: format!("{doc}{i}") };
        let d = dialogs_from_turn_records(vec![rec("b", 0, 0), rec("a", 1, 10_000), rec("a", 0, 0)]);
        assert_eq!(d.len(), 3);
        assert_eq!((d[0].doc_id.as_str(), d[0].turns[0].text.as_str()), ("a", "a0"));
        assert_eq!(d[1].dialog_index, 1);
        assert_eq!(d[2].doc_id, "b");
    }

    #[test]
    fn examples_per_turn() {
        let turns = ["x", "y", "z"].iter().map(|t| Turn { text: t.to_string(), start_ms: None, end_ms: None }).collect();
        let d = Dialog { doc_id: "d".into(), dialog_index: 0, turns };
        let ex = examples_from_dialog(&d, |_| 4);
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[1].context, vec!["x", "y"]);
        assert_eq!(final_turn_example(&d, |_| 0).unwrap().response, "z");
    }
}
