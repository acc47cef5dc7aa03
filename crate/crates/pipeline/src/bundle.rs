//! In-memory output bundles, their manifest, and the atomic write of a
//! bundle directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use skillshap_core::dataset::ScalarNormalizer;
use skillshap_core::{Category, ModelConfig};

use crate::{sha256_hex, PipelineError};

pub const MANIFEST: &str = "manifest.json";
pub const TIMINGS: &str = "timings.txt";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowCounts {
    pub pair: usize,
    pub train: usize,
    pub test: usize,
    pub positive_train: usize,
    pub positive_test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub software: String,
    pub experiment: String,
    pub config_sha256: String,
    pub data_sha256: String,
    pub positive: Category,
    pub negative: Category,
    pub seeds: BTreeMap<String, u64>,
    pub rows: RowCounts,
    /// Min-max bounds fitted on the training split.
    pub normalization: ScalarNormalizer,
    pub attributed: ModelConfig,
    /// Every file of the bundle except the manifest itself.
    pub files: Vec<FileEntry>,
    /// Files listed without a hash because their content varies between runs.
    pub volatile: Vec<String>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn read(dir: &Path) -> Result<Manifest, PipelineError> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(PipelineError::io(&path))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Bundle(format!("{}: {e}", path.display())))
    }

    /// Rebuilds the inventory from the files now present under `dir` and
    /// rewrites the manifest.
    pub fn refresh(mut self, dir: &Path) -> Result<Manifest, PipelineError> {
        let mut paths = Vec::new();
        collect_files(dir, dir, &mut paths)?;
        paths.sort();
        self.files.clear();
        self.volatile.clear();
        for rel in paths {
            if rel == MANIFEST {
                continue;
            }
            if rel == TIMINGS {
                self.volatile.push(rel);
                continue;
            }
            let full = dir.join(&rel);
            let bytes = std::fs::read(&full).map_err(PipelineError::io(&full))?;
            self.files.push(FileEntry {
                sha256: sha256_hex(&bytes),
                bytes: bytes.len(),
                path: rel,
            });
        }
        let path = dir.join(MANIFEST);
        std::fs::write(&path, self.to_json()).map_err(PipelineError::io(&path))?;
        Ok(self)
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<(), PipelineError> {
    for entry in std::fs::read_dir(dir).map_err(PipelineError::io(dir))? {
        let entry = entry.map_err(PipelineError::io(dir))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("walk stays under root");
            let parts: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
            out.push(parts.join("/"));
        }
    }
    Ok(())
}

/// Files keyed by `/`-separated relative path.
#[derive(Clone, Debug, Default)]
pub struct Bundle {
    files: BTreeMap<String, Vec<u8>>,
    volatile: BTreeMap<String, Vec<u8>>,
}

impl Bundle {
    pub fn add_text(&mut self, path: impl Into<String>, text: String) {
        self.files.insert(path.into(), text.into_bytes());
    }

    /// Pretty JSON with a trailing newline.
    pub fn add_json<T: Serialize + ?Sized>(&mut self, path: impl Into<String>, value: &T) {
        let text = serde_json::to_string_pretty(value).expect("bundle documents serialize") + "\n";
        self.add_text(path, text);
    }

    /// A file excluded from hashing.
    pub fn add_volatile(&mut self, path: impl Into<String>, text: String) {
        self.volatile.insert(path.into(), text.into_bytes());
    }

    pub fn get(&self, path: &str) -> Option<&[u8]> {
        self.files.get(path).or_else(|| self.volatile.get(path)).map(Vec::as_slice)
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.files.keys().chain(self.volatile.keys()).map(String::as_str)
    }

    pub fn inventory(&self) -> Vec<FileEntry> {
        self.files
            .iter()
            .filter(|(p, _)| p.as_str() != MANIFEST)
            .map(|(p, b)| FileEntry {
                path: p.clone(),
                sha256: sha256_hex(b),
                bytes: b.len(),
            })
            .collect()
    }

    /// Fills the manifest inventory from the bundle and stores it.
    pub fn seal(&mut self, mut manifest: Manifest) -> Manifest {
        manifest.files = self.inventory();
        manifest.volatile = self.volatile.keys().cloned().collect();
        self.add_text(MANIFEST, manifest.to_json());
        manifest
    }

    /// Writes into a sibling staging directory, then replaces `dir` with it.
    /// Nothing is left behind on failure.
    pub fn write_to(&self, dir: &Path) -> Result<(), PipelineError> {
        let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        std::fs::create_dir_all(parent).map_err(PipelineError::io(parent))?;
        let name = dir.file_name().map_or_else(|| "bundle".into(), |n| n.to_string_lossy().into_owned());
        let staging = parent.join(format!(".{name}.partial"));
        if staging.exists() {
            std::fs::remove_dir_all(&staging).map_err(PipelineError::io(&staging))?;
        }
        let result = self.write_files(&staging).and_then(|()| {
            if dir.exists() {
                std::fs::remove_dir_all(dir).map_err(PipelineError::io(dir))?;
            }
            std::fs::rename(&staging, dir).map_err(PipelineError::io(dir))
        });
        if result.is_err() {
            let _ = std::fs::remove_dir_all(&staging);
        }
        result
    }

    fn write_files(&self, root: &Path) -> Result<(), PipelineError> {
        for (rel, bytes) in self.files.iter().chain(&self.volatile) {
            let path: PathBuf = rel.split('/').fold(root.to_path_buf(), |p, part| p.join(part));
            if let Some(d) = path.parent() {
                std::fs::create_dir_all(d).map_err(PipelineError::io(d))?;
            }
            std::fs::write(&path, bytes).map_err(PipelineError::io(&path))?;
        }
        Ok(())
    }
}
