//! Line-delimited dataset manifest: one JSON header line carrying the split
//! ratios and seed, then one JSON record per image with the fixed field order
//! `id, species, split, lat, lon, path, status`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::write_atomic;
use crate::data::split::{Split, SplitRatios};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub ratios: [f64; 3],
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryStatus {
    Pending,
    Complete,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub species: String,
    pub split: Split,
    pub lat: f64,
    pub lon: f64,
    /// Relative to the dataset root.
    pub path: String,
    pub status: EntryStatus,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(ratios: SplitRatios, seed: u64) -> Self {
        DatasetManifest { header: ManifestHeader { ratios: ratios.as_array(), seed }, entries: Vec::new() }
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.header)?;
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header =
            lines.next().ok_or_else(|| Error::Format { what: "manifest", detail: "missing header line".into() })?;
        Ok(DatasetManifest {
            header: serde_json::from_str(header)?,
            entries: lines.map(serde_json::from_str).collect::<std::result::Result<_, _>>()?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text)
    }

    /// Per-species `[train, validate, test]` counts over entries with `status`.
    pub fn species_counts(&self, status: EntryStatus) -> BTreeMap<String, [usize; 3]> {
        let mut counts: BTreeMap<String, [usize; 3]> = BTreeMap::new();
        for e in self.entries.iter().filter(|e| e.status == status) {
            counts.entry(e.species.clone()).or_default()[e.split as usize] += 1;
        }
        counts
    }

    /// Sorted species names with at least one complete entry; class indices
    /// follow this order.
    pub fn classes(&self) -> Vec<String> {
        self.species_counts(EntryStatus::Complete).into_keys().collect()
    }
}
