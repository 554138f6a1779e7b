use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::hashing::{canonical_hash, sha256_hex};
use crate::{Error, Result};

/// What a stage consumed and produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub input_hash: String,
    /// Relative to the run directory.
    pub dir: PathBuf,
    /// File name to SHA-256 of its contents.
    pub outputs: BTreeMap<String, String>,
    #[serde(skip)]
    pub cached: bool,
}

impl StageRecord {
    pub fn output_hash(&self, file: &str) -> &str {
        self.outputs.get(file).map(String::as_str).unwrap_or("")
    }
}

/// Append-only store under `runs/<experiment_id>/`. Each stage writes into
/// `<stage>/<input hash prefix>/` and is never modified afterwards; a stage
/// whose inputs hash to an existing, intact directory is skipped.
#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

const STAGE_FILE: &str = "stage.json";

pub fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

impl RunStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(RunStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn intact(dir: &Path, input_hash: &str) -> Option<StageRecord> {
        let rec: StageRecord = serde_json::from_slice(&fs::read(dir.join(STAGE_FILE)).ok()?).ok()?;
        if rec.input_hash != input_hash {
            return None;
        }
        for (name, hash) in &rec.outputs {
            if file_hash(&dir.join(name)).ok()? != *hash {
                return None;
            }
        }
        Some(rec)
    }

    /// Runs `compute` unless an intact output for the same inputs exists.
    /// `compute` writes its files into the directory it is given. Errors
    /// carry the stage name.
    pub fn stage<I: Serialize + ?Sized>(
        &self,
        stage: &str,
        inputs: &I,
        compute: impl FnOnce(&Path) -> Result<()>,
    ) -> Result<(PathBuf, StageRecord)> {
        let wrap = |e: Error| match e {
            Error::Stage { .. } => e,
            other => Error::Stage {
                stage: stage.to_string(),
                source: Box::new(other),
            },
        };
        let input_hash = canonical_hash(inputs);
        let rel = PathBuf::from(stage).join(&input_hash[..16]);
        let dir = self.root.join(&rel);
        if let Some(mut rec) = Self::intact(&dir, &input_hash) {
            log::info!("stage {stage}: cached ({})", rel.display());
            rec.cached = true;
            return Ok((dir, rec));
        }
        let tmp = self.root.join(stage).join(format!(".tmp-{}", &input_hash[..16]));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| wrap(Error::io(&tmp, e)))?;
        }
        fs::create_dir_all(&tmp).map_err(|e| wrap(Error::io(&tmp, e)))?;
        log::info!("stage {stage}: running");
        compute(&tmp).map_err(wrap)?;
        let mut outputs = BTreeMap::new();
        for entry in fs::read_dir(&tmp).map_err(|e| wrap(Error::io(&tmp, e)))? {
            let entry = entry.map_err(|e| wrap(Error::io(&tmp, e)))?;
            if entry.path().is_file() {
                let name = entry.file_name().to_string_lossy().into_owned();
                outputs.insert(name, file_hash(&entry.path()).map_err(wrap)?);
            }
        }
        let rec = StageRecord {
            stage: stage.to_string(),
            input_hash,
            dir: rel,
            outputs,
            cached: false,
        };
        let json = serde_json::to_string_pretty(&rec).map_err(|e| wrap(e.into()))?;
        fs::write(tmp.join(STAGE_FILE), json).map_err(|e| wrap(Error::io(&tmp, e)))?;
        if dir.exists() {
            // a damaged earlier attempt for the same inputs
            fs::remove_dir_all(&dir).map_err(|e| wrap(Error::io(&dir, e)))?;
        }
        fs::rename(&tmp, &dir).map_err(|e| wrap(Error::io(&dir, e)))?;
        Ok((dir, rec))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn second_run_is_cached_and_damage_reruns() {
        let tmp = tempfile::tempdir().unwrap();
        let store = RunStore::open(tmp.path()).unwrap();
        let calls = Cell::new(0);
        let run = || {
            store
                .stage("gen", &("a", 1), |dir| {
                    calls.set(calls.get() + 1);
                    fs::write(dir.join("out.txt"), "hello").map_err(|e| Error::io(dir, e))
                })
                .unwrap()
        };
        let (dir, first) = run();
        assert!(!first.cached);
        let (_, second) = run();
        assert!(second.cached);
        assert_eq!(calls.get(), 1);
        fs::write(dir.join("out.txt"), "tampered").unwrap();
        let (_, third) = run();
        assert!(!third.cached);
        assert_eq!(calls.get(), 2);
        assert_eq!(third.outputs, first.outputs);
    }

    #[test]
    fn failures_name_the_stage() {
        let tmp = tempfile::tempdir().unwrap();
        let store = RunStore::open(tmp.path()).unwrap();
        let err = store
            .stage("match", &1, |_| Err(Error::NoCaptions("oak".into())))
            .unwrap_err();
        assert!(matches!(&err, Error::Stage { stage, .. } if stage == "match"));
    }
}
