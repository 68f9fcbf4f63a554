//! Manifest format: one record per line, `relative/path.png,identity,modality`.

use std::collections::BTreeSet;
use std::path::Path;

use crate::data::Modality;
use crate::error::{Error, Result};

/// Which stage of the retrieval protocol a manifest feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Query,
    Gallery,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: String,
    pub identity: u32,
    pub modality: Modality,
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub split: Split,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>, split: Split) -> Result<Self> {
        validate(&entries)?;
        Ok(DatasetManifest { entries, split })
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn validate(entries: &[ManifestEntry]) -> Result<()> {
    if entries.is_empty() {
        return Err(Error::data("manifest has no entries"));
    }
    let mut seen = BTreeSet::new();
    for e in entries {
        if e.identity == 0 {
            return Err(Error::data(format!(
                "manifest entry {:?}: identity labels start at 1",
                e.path
            )));
        }
        if !seen.insert(e.path.as_str()) {
            return Err(Error::data(format!("duplicate manifest path {:?}", e.path)));
        }
    }
    Ok(())
}

/// Parse manifest text. Blank lines and `#` comments are skipped.
pub fn parse_manifest(text: &str) -> Result<DatasetManifest> {
    let mut entries = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        // Path comes first and must not contain commas; split from the right.
        let mut fields = line.rsplitn(3, ',');
        let modality = fields.next();
        let identity = fields.next();
        let path = fields.next();
        let (path, identity, modality) = match (path, identity, modality) {
            (Some(p), Some(i), Some(m)) if !p.trim().is_empty() => (p.trim(), i.trim(), m),
            _ => {
                return Err(Error::data(format!(
                    "manifest line {}: expected `path,identity,modality`, got {raw:?}",
                    lineno + 1
                )))
            }
        };
        let identity: u32 = identity.parse().map_err(|_| {
            Error::data(format!(
                "manifest line {}: bad identity {identity:?}",
                lineno + 1
            ))
        })?;
        if identity == 0 {
            return Err(Error::data(format!(
                "manifest line {}: identity labels start at 1",
                lineno + 1
            )));
        }
        entries.push(ManifestEntry {
            path: path.to_string(),
            identity,
            modality: Modality::parse(modality)?,
        });
    }
    DatasetManifest::new(entries, Split::Train)
}

/// Read a manifest file and verify that every referenced image exists
/// next to it.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest = parse_manifest(&text)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    for entry in &manifest.entries {
        let target = base.join(&entry.path);
        if !target.is_file() {
            return Err(Error::data(format!(
                "manifest references missing image {}",
                target.display()
            )));
        }
    }
    Ok(manifest)
}

/// Serialize entries in the one-record-per-line format.
pub fn manifest_to_string(entries: &[ManifestEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!("{},{},{}\n", e.path, e.identity, e.modality));
    }
    out
}

pub fn save_manifest(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    std::fs::write(path, manifest_to_string(entries)).map_err(|e| Error::io(path, e))
}
