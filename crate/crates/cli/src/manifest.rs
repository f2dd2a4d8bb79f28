//! Per-stage manifests and hash-based skipping.
//!
//! Each stage records the hashes of what it read, its parameters, its seed
//! and the hashes of what it wrote. A stage whose recorded inputs, parameters
//! and seed all match is skipped, after checking that its outputs are still
//! the files it wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use empdial_core::corpus::list_documents;
use empdial_core::{file_fingerprint, fingerprint};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    /// Logical input name to content hash.
    pub inputs: BTreeMap<String, String>,
    pub config: serde_json::Value,
    pub seed: u64,
    /// Output path, relative to the work directory, to content hash.
    pub outputs: BTreeMap<String, String>,
}

/// Something a stage reads.
#[derive(Clone, Debug)]
pub enum Input {
    /// Written by an earlier stage inside the work directory.
    Artifact { rel: String, stage: &'static str },
    /// Supplied by the user; file or directory.
    External { name: String, path: PathBuf },
}

impl Input {
    pub fn artifact(rel: impl Into<String>, stage: &'static str) -> Self {
        Input::Artifact { rel: rel.into(), stage }
    }

    pub fn external(name: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        Input::External {
            name: name.into(),
            path: path.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    Skipped,
}

/// Hash of a file, or of every file under a directory keyed by relative path.
pub fn hash_path(path: &Path) -> Result<String> {
    if path.is_dir() {
        let mut listing = String::new();
        for (id, p) in list_documents(path)? {
            listing.push_str(&id);
            listing.push('\t');
            listing.push_str(&file_fingerprint(&p)?);
            listing.push('\n');
        }
        Ok(fingerprint(listing.as_bytes()))
    } else {
        Ok(file_fingerprint(path)?)
    }
}

pub struct Workspace {
    pub root: PathBuf,
    /// Rerun stages even when their manifest matches.
    pub force: bool,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            force: false,
        }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn manifest_path(&self, stage: &str) -> PathBuf {
        self.root.join("manifests").join(format!("{stage}.json"))
    }

    pub fn manifest(&self, stage: &str) -> Result<Option<StageManifest>> {
        let p = self.manifest_path(stage);
        if !p.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_str(&std::fs::read_to_string(&p)?)?))
    }

    /// Hash of an upstream artifact, checked against its producer's manifest.
    fn verified_artifact(&self, rel: &str, stage: &'static str) -> Result<String> {
        let path = self.path(rel);
        let missing = || Error::MissingArtifact {
            path: path.clone(),
            stage,
        };
        if !path.exists() {
            return Err(missing());
        }
        let recorded = self
            .manifest(stage)?
            .and_then(|m| m.outputs.get(rel).cloned())
            .ok_or_else(missing)?;
        let actual = hash_path(&path)?;
        if actual != recorded {
            return Err(Error::HashMismatch {
                path,
                expected: recorded,
                actual,
            });
        }
        Ok(actual)
    }

    fn input_hashes(&self, inputs: &[Input]) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for input in inputs {
            match input {
                Input::Artifact { rel, stage } => {
                    out.insert(rel.clone(), self.verified_artifact(rel, stage)?);
                }
                Input::External { name, path } => {
                    if !path.exists() {
                        return Err(Error::Config(format!("{name} not found at {}", path.display())));
                    }
                    out.insert(name.clone(), hash_path(path)?);
                }
            }
        }
        Ok(out)
    }

    /// Runs `body` unless an identical run already produced `outputs`.
    pub fn run_stage(
        &self,
        stage: &str,
        inputs: &[Input],
        config: serde_json::Value,
        seed: u64,
        outputs: &[&str],
        body: impl FnOnce() -> Result<()>,
    ) -> Result<Outcome> {
        let inputs = self.input_hashes(inputs)?;
        if !self.force {
            if let Some(prev) = self.manifest(stage)? {
                let same_keys = prev.outputs.keys().map(String::as_str).eq(sorted(outputs));
                if prev.inputs == inputs && prev.config == config && prev.seed == seed && same_keys {
                    if self.outputs_intact(&prev)? {
                        log::info!("{stage}: up to date, skipped");
                        return Ok(Outcome::Skipped);
                    }
                    log::info!("{stage}: outputs missing, rerunning");
                }
            }
        }
        log::info!("{stage}: running");
        for rel in outputs {
            if let Some(dir) = self.path(rel).parent() {
                std::fs::create_dir_all(dir)?;
            }
        }
        body()?;
        let mut out_hashes = BTreeMap::new();
        for rel in outputs {
            let p = self.path(rel);
            if !p.exists() {
                return Err(Error::Config(format!("stage {stage} did not write {rel}")));
            }
            out_hashes.insert(rel.to_string(), hash_path(&p)?);
        }
        let manifest = StageManifest {
            stage: stage.to_string(),
            inputs,
            config,
            seed,
            outputs: out_hashes,
        };
        let mp = self.manifest_path(stage);
        std::fs::create_dir_all(mp.parent().unwrap())?;
        std::fs::write(&mp, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(Outcome::Ran)
    }

    /// True when every output still has its recorded hash; false when one is
    /// gone. A changed file is an error: something edited a stage output.
    fn outputs_intact(&self, m: &StageManifest) -> Result<bool> {
        for (rel, expected) in &m.outputs {
            let p = self.path(rel);
            if !p.exists() {
                return Ok(false);
            }
            let actual = hash_path(&p)?;
            if &actual != expected {
                return Err(Error::HashMismatch {
                    path: p,
                    expected: expected.clone(),
                    actual,
                });
            }
        }
        Ok(true)
    }
}

fn sorted<'a>(v: &[&'a str]) -> Vec<&'a str> {
    let mut v = v.to_vec();
    v.sort_unstable();
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    fn write(ws: &Workspace, rel: &str, body: &str) {
        std::fs::create_dir_all(ws.path(rel).parent().unwrap()).unwrap();
        std::fs::write(ws.path(rel), body).unwrap();
    }

    #[test]
    fn skip_rerun_and_tamper() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path());
        let calls = Cell::new(0);
        let run = |content: &'static str, seed: u64| {
            ws.run_stage("a", &[], serde_json::json!({"x": 1}), seed, &["out/a.txt"], || {
                calls.set(calls.get() + 1);
                write(&ws, "out/a.txt", content);
                Ok(())
            })
        };
        assert_eq!(run("one", 1).unwrap(), Outcome::Ran);
        assert_eq!(run("one", 1).unwrap(), Outcome::Skipped);
        assert_eq!(run("one", 2).unwrap(), Outcome::Ran);
        assert_eq!(calls.get(), 2);

        let downstream = || {
            ws.run_stage("b", &[Input::artifact("out/a.txt", "a")], serde_json::Value::Null, 0, &["b.txt"], || {
                write(&ws, "b.txt", "b");
                Ok(())
            })
        };
        assert_eq!(downstream().unwrap(), Outcome::Ran);
        assert_eq!(downstream().unwrap(), Outcome::Skipped);

        std::fs::write(ws.path("out/a.txt"), "edited").unwrap();
        assert!(matches!(downstream(), Err(Error::HashMismatch { .. })));
        assert!(matches!(run("one", 2), Err(Error::HashMismatch { .. })));

        std::fs::remove_file(ws.path("out/a.txt")).unwrap();
        match downstream() {
            Err(Error::MissingArtifact { stage, .. }) => assert_eq!(stage, "a"),
            other => panic!("{other:?}"),
        }
        // a deleted output makes its own stage run again
        assert_eq!(run("one", 2).unwrap(), Outcome::Ran);
    }

    #[test]
    fn directory_hash_tracks_contents() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("x/y")).unwrap();
        std::fs::write(dir.path().join("x/y/f"), "1").unwrap();
        let h1 = hash_path(&dir.path().join("x")).unwrap();
        std::fs::write(dir.path().join("x/y/f"), "2").unwrap();
        assert_ne!(h1, hash_path(&dir.path().join("x")).unwrap());
    }
}
