//! Run manifest: every output file with its content hash, plus the hashes
//! of the inputs each stage consumed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use geocausal_core::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub stage: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Input path (relative to the run directory when inside it) → hash.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub files: BTreeMap<String, FileEntry>,
    pub stages: BTreeMap<String, StageRecord>,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            version: 1,
            files: BTreeMap::new(),
            stages: BTreeMap::new(),
        }
    }
}

pub fn sha256_file(path: &Path) -> CliResult<(String, u64)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

/// Manifest key for `path`: relative to `root` with `/` separators when
/// inside it, otherwise the path as given.
pub fn key_for(root: &Path, path: &Path) -> String {
    match path.strip_prefix(root) {
        Ok(rel) => rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/"),
        Err(_) => path.to_string_lossy().into_owned(),
    }
}

impl Manifest {
    pub fn load(root: &Path) -> CliResult<Self> {
        let path = root.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, root: &Path) -> CliResult<()> {
        let path = root.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    pub fn has_stage(&self, stage: &str) -> bool {
        self.stages.contains_key(stage)
    }

    pub fn outputs_of(&self, stage: &str) -> Vec<String> {
        self.stages
            .get(stage)
            .map(|s| s.outputs.iter().cloned().collect())
            .unwrap_or_default()
    }

    /// Combined hash of a stage's recorded outputs.
    fn stage_digest(&self, stage: &str) -> Option<String> {
        let rec = self.stages.get(stage)?;
        let mut h = Sha256::new();
        for key in &rec.outputs {
            h.update(format!("{key} {}\n", self.files[key].sha256));
        }
        Some(hex::encode(h.finalize()))
    }

    fn digest(&self, input: &InputRef) -> CliResult<Option<String>> {
        match input {
            InputRef::File(p) => p.exists().then(|| sha256_file(p).map(|h| h.0)).transpose(),
            InputRef::Stage(s) => Ok(self.stage_digest(s)),
            InputRef::Dir(d) => {
                if !d.is_dir() {
                    return Ok(None);
                }
                let mut files = Vec::new();
                collect_files(d, &mut files)?;
                files.sort();
                let mut h = Sha256::new();
                for f in files {
                    h.update(format!("{} {}\n", key_for(d, &f), sha256_file(&f)?.0));
                }
                Ok(Some(hex::encode(h.finalize())))
            }
        }
    }

    /// Replaces the record of `stage`. Files the stage produced before but
    /// not this time are deleted so no orphan outputs remain.
    pub fn record(&mut self, root: &Path, stage: &str, inputs: &[InputRef], outputs: &[PathBuf]) -> CliResult<()> {
        let mut rec = StageRecord::default();
        for input in inputs {
            let hash = self
                .digest(input)?
                .ok_or_else(|| CliError::MissingStage(format!("input {} is missing", input.key(root))))?;
            rec.inputs.insert(input.key(root), hash);
        }
        let mut fresh = BTreeMap::new();
        for p in outputs {
            let key = key_for(root, p);
            let (sha256, bytes) = sha256_file(p)?;
            fresh.insert(
                key.clone(),
                FileEntry {
                    stage: stage.to_string(),
                    sha256,
                    bytes,
                },
            );
            rec.outputs.insert(key);
        }
        if let Some(old) = self.stages.get(stage) {
            for key in old.outputs.difference(&rec.outputs) {
                let path = root.join(key);
                if path.exists() {
                    std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
                }
                self.files.remove(key);
            }
        }
        self.files.extend(fresh);
        self.stages.insert(stage.to_string(), rec);
        Ok(())
    }

    /// Checks that every output of `stage` is on disk unchanged and that
    /// the inputs it consumed still hash as they did.
    pub fn verify_stage(&self, root: &Path, stage: &str) -> CliResult<()> {
        let rec = self
            .stages
            .get(stage)
            .ok_or_else(|| CliError::MissingStage(format!("stage `{stage}` has not been run in {}", root.display())))?;
        let mut diff = String::new();
        for key in &rec.outputs {
            let entry = &self.files[key];
            let path = root.join(key);
            if !path.exists() {
                let _ = writeln!(diff, "  {key}: listed as {stage} output but missing");
                continue;
            }
            let (now, _) = sha256_file(&path)?;
            if now != entry.sha256 {
                let _ = writeln!(
                    diff,
                    "  {key}: manifest {}, on disk {}",
                    &entry.sha256[..12],
                    &now[..12]
                );
            }
        }
        for (key, hash) in &rec.inputs {
            let input = InputRef::from_key(root, key);
            match self.digest(&input)? {
                None => {
                    let _ = writeln!(diff, "  {key}: consumed by {stage} but no longer present");
                }
                Some(h) if &h != hash => {
                    let _ = writeln!(
                        diff,
                        "  {key}: changed since {stage} ran ({} -> {}); rerun {stage}",
                        &hash[..12],
                        &h[..12]
                    );
                }
                Some(_) => {}
            }
        }
        if diff.is_empty() {
            Ok(())
        } else {
            Err(CliError::Stale(diff))
        }
    }
}

/// Something a stage reads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InputRef {
    File(PathBuf),
    /// Every output of an earlier stage.
    Stage(String),
    /// Every file below a directory outside the manifest.
    Dir(PathBuf),
}

impl InputRef {
    fn key(&self, root: &Path) -> String {
        match self {
            InputRef::File(p) => key_for(root, p),
            InputRef::Stage(s) => format!("stage:{s}"),
            InputRef::Dir(d) => format!("dir:{}", key_for(root, d)),
        }
    }

    fn from_key(root: &Path, key: &str) -> Self {
        let resolve = |k: &str| {
            let p = Path::new(k);
            if p.is_absolute() || !root.join(p).exists() {
                p.to_path_buf()
            } else {
                root.join(p)
            }
        };
        if let Some(s) = key.strip_prefix("stage:") {
            InputRef::Stage(s.to_string())
        } else if let Some(d) = key.strip_prefix("dir:") {
            InputRef::Dir(resolve(d))
        } else {
            InputRef::File(resolve(key))
        }
    }
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}
