//! Corpus manifests: CSV with `path,speaker,duration` columns, paths relative
//! to the manifest's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub speaker: String,
    /// Seconds.
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    /// Directory relative paths are resolved against.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(root: PathBuf, entries: Vec<ManifestEntry>) -> Self {
        Self { root, entries }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(file);
        let mut entries = Vec::new();
        for (i, row) in rdr.deserialize::<ManifestEntry>().enumerate() {
            let e = row.map_err(|e| Error::Parse(format!("{} row {}: {e}", path.display(), i + 1)))?;
            if !(e.duration > 0.0) {
                return Err(Error::Parse(format!(
                    "{} row {}: duration {} must be positive",
                    path.display(),
                    i + 1,
                    e.duration
                )));
            }
            entries.push(e);
        }
        if entries.is_empty() {
            return Err(Error::Parse(format!("{} lists no utterances", path.display())));
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self { root, entries };
        for e in &m.entries {
            let p = m.resolve(e);
            if !p.is_file() {
                return Err(Error::io(p, std::io::ErrorKind::NotFound.into()));
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        for e in &self.entries {
            w.serialize(e).map_err(|e| Error::Parse(format!("writing manifest: {e}")))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, e: &ManifestEntry) -> PathBuf {
        if e.path.is_absolute() {
            e.path.clone()
        } else {
            self.root.join(&e.path)
        }
    }

    /// Sorted distinct speaker labels.
    pub fn speakers(&self) -> Vec<String> {
        let mut s: Vec<String> = self.entries.iter().map(|e| e.speaker.clone()).collect();
        s.sort();
        s.dedup();
        s
    }
}
