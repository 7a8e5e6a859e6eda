//! Dataset manifest: a JSON listing of cases with their volume files,
//! context records, labels and split membership.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::context::ContextRecord;
use super::split::Split;
use super::synth::LabeledCase;
use super::volume::{read_volume, write_atomic, write_volume};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONTEXT_BANK_FILE: &str = "context_bank.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub case_id: String,
    pub subject_id: String,
    #[serde(default)]
    pub scan_id: String,
    /// Relative to the manifest's directory unless absolute.
    pub volume_path: PathBuf,
    pub context: ContextRecord,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal_center: Option<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub cases: Vec<ManifestEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl Manifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Data(format!("{}: unsupported manifest version {}", path.display(), m.version)));
        }
        for c in &m.cases {
            if c.label > 1 {
                return Err(Error::Data(format!("case {}: label {} is not 0 or 1", c.case_id, c.label)));
            }
        }
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        write_atomic(path, text.as_bytes())
    }

    pub fn entries(&self, split: Option<Split>) -> impl Iterator<Item = &ManifestEntry> {
        self.cases.iter().filter(move |c| split.is_none() || c.split == split)
    }

    pub fn volume_path(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.volume_path.is_absolute() {
            entry.volume_path.clone()
        } else {
            self.root.join(&entry.volume_path)
        }
    }

    /// Loads the cases of one split (all cases for `None`), reading volumes.
    pub fn load(&self, split: Option<Split>) -> Result<Vec<LabeledCase>> {
        self.entries(split).map(|e| self.load_entry(e)).collect()
    }

    pub fn load_entry(&self, e: &ManifestEntry) -> Result<LabeledCase> {
        let volume = read_volume(self.volume_path(e))?.with_ids(&e.subject_id, &e.scan_id);
        Ok(LabeledCase {
            case_id: e.case_id.clone(),
            volume,
            context: e.context.clone(),
            label: e.label,
            signal_center: e.signal_center,
        })
    }
}

/// Writes each case's volume under `dir/volumes/`, the training-split context
/// bank, and the manifest. Returns the manifest.
pub fn write_dataset(dir: &Path, cases: &[LabeledCase], splits: &[Split]) -> Result<Manifest> {
    if cases.len() != splits.len() {
        return Err(Error::invalid("write_dataset", "one split per case required"));
    }
    let vol_dir = dir.join("volumes");
    fs::create_dir_all(&vol_dir).map_err(|e| Error::io(&vol_dir, e))?;
    let mut entries = Vec::with_capacity(cases.len());
    for (case, &split) in cases.iter().zip(splits) {
        let rel = PathBuf::from("volumes").join(format!("{}.ndv", case.case_id));
        write_volume(&case.volume, dir.join(&rel))?;
        entries.push(ManifestEntry {
            case_id: case.case_id.clone(),
            subject_id: case.volume.subject_id.clone(),
            scan_id: case.volume.scan_id.clone(),
            volume_path: rel,
            context: case.context.clone(),
            label: case.label,
            split: Some(split),
            signal_center: case.signal_center,
        });
    }
    let bank: Vec<&ContextRecord> =
        cases.iter().zip(splits).filter(|(_, &s)| s == Split::Train).map(|(c, _)| &c.context).collect();
    write_context_bank(&dir.join(CONTEXT_BANK_FILE), &bank)?;

    let manifest = Manifest { version: MANIFEST_VERSION, cases: entries, root: dir.to_path_buf() };
    manifest.write(dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

pub fn write_context_bank(path: &Path, bank: &[&ContextRecord]) -> Result<()> {
    let text = serde_json::to_string_pretty(bank).map_err(|e| Error::json(path, e))?;
    write_atomic(path, text.as_bytes())
}

pub fn read_context_bank(path: impl AsRef<Path>) -> Result<Vec<ContextRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}
