//! Dataset manifests: a JSON list of CT/label file pairs with a split tag.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{load_volume, write_atomic};
use crate::volume::Volume;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// CT path, relative to the manifest directory unless absolute.
    pub ct: PathBuf,
    pub label: PathBuf,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths are resolved against.
    pub root: PathBuf,
}

/// A loaded CT/label pair.
#[derive(Debug, Clone)]
pub struct Case {
    pub name: String,
    pub ct: Volume<f32>,
    pub labels: Volume<u8>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries: Vec<ManifestEntry> = serde_json::from_str(&text)?;
        Ok(Manifest {
            entries,
            root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.entries)?;
        write_atomic(path.as_ref(), text.as_bytes())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Loads every case of `split`, in manifest order.
    pub fn load_cases(&self, split: Split) -> Result<Vec<Case>> {
        self.split(split).map(|e| self.load_entry(e)).collect()
    }

    pub fn load_entry(&self, e: &ManifestEntry) -> Result<Case> {
        let ct = load_volume(self.resolve(&e.ct))?.into_f32();
        let labels = load_volume(self.resolve(&e.label))?.into_labels()?;
        if ct.dims() != labels.dims() {
            return Err(Error::Dimension(format!(
                "{}: CT dims {:?} differ from label dims {:?}",
                e.ct.display(),
                ct.dims(),
                labels.dims()
            )));
        }
        Ok(Case {
            name: case_name(&e.ct),
            ct,
            labels,
        })
    }
}

/// File stem without a trailing `_ct`.
pub fn case_name(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("case");
    stem.strip_suffix("_ct").unwrap_or(stem).to_string()
}
