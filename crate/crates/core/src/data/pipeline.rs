//! End-to-end dataset generation and loading.
//!
//! `build_dataset` runs inventory cleaning, species selection, stratified
//! splitting and tile fetching, then lays images out as
//! `dataset/<split>/<species_slug>/<id>.png` next to `manifest.jsonl`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{augment, oversample_plan, AugmentParams};
use crate::checkpoint::write_atomic;
use crate::data::inventory::{parse_inventory, select_top_species, ColumnMap};
use crate::data::manifest::{DatasetManifest, EntryStatus, ManifestEntry};
use crate::data::split::{stratified_split, Split, SplitRatios};
use crate::data::tiles::{
    build_tile_request, encode_png, fetch_tiles, ApiKey, FetchOptions, FetchStatus, TileClient, TileConfig,
};
use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::Dataset;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const REJECTIONS_FILE: &str = "rejections.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct OversampleConfig {
    /// Images per class after oversampling; the largest class size when unset.
    pub target: Option<usize>,
    pub params: AugmentParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub top_k: usize,
    pub ratios: SplitRatios,
    pub columns: ColumnMap,
    pub tiles: TileConfig,
    pub fetch: FetchOptions,
    pub oversample: Option<OversampleConfig>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            top_k: 6,
            ratios: SplitRatios::default(),
            columns: ColumnMap::default(),
            tiles: TileConfig::default(),
            fetch: FetchOptions::default(),
            oversample: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BuildReport {
    pub kept: usize,
    pub rejected: usize,
    /// Selected species with their frequencies, most frequent first.
    pub ranked: Vec<(String, usize)>,
    pub warnings: Vec<String>,
    pub fetched: usize,
    pub cached: usize,
    pub failed: usize,
    pub augmented: usize,
    pub manifest: DatasetManifest,
}

/// Lowercase ASCII with runs of other characters collapsed to `_`.
pub fn species_slug(name: &str) -> String {
    let mut slug = String::new();
    for c in name.chars() {
        if c.is_ascii_alphanumeric() {
            slug.push(c.to_ascii_lowercase());
        } else if !slug.ends_with('_') {
            slug.push('_');
        }
    }
    slug.trim_matches('_').to_owned()
}

fn dataset_path(split: Split, species: &str, file_stem: &str) -> String {
    format!("dataset/{}/{}/{}.png", split.name(), species_slug(species), file_stem)
}

/// Decodes a tile into an `[H, W, 3]` tensor scaled to `[0, 1]`, dropping
/// `crop_bottom` rows.
pub fn decode_image<T: Scalar>(bytes: &[u8], crop_bottom: u32) -> Result<Tensor<T>> {
    let rgb = image::load_from_memory(bytes)?.to_rgb8();
    let (w, h) = rgb.dimensions();
    if crop_bottom >= h {
        return Err(Error::invalid(format!("cannot crop {crop_bottom} rows from a {h}-row image")));
    }
    let keep = (h - crop_bottom) as usize;
    let data = rgb.as_raw()[..keep * w as usize * 3].iter().map(|&b| T::of(b as f64 / 255.0)).collect();
    Tensor::new(&[keep, w as usize, 3], data)
}

/// PNG-encodes an `[H, W, 3]` tensor with values in `[0, 1]`.
pub fn encode_image<T: Scalar>(image: &Tensor<T>) -> Result<Vec<u8>> {
    let &[h, w, 3] = image.shape() else {
        return Err(Error::shape("encode image", format!("expected [H, W, 3], got {:?}", image.shape())));
    };
    let rgb = image.data().iter().map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    Ok(encode_png(w as u32, h as u32, rgb))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Builds the labelled dataset under `out`: `cache/` holds tiles as served,
/// `dataset/` the split layout, plus `manifest.jsonl` and `rejections.jsonl`.
/// Tiles that fail to download are kept in the manifest with status `failed`.
pub fn build_dataset(
    inventory: &[u8],
    config: &DatasetConfig,
    seed: u64,
    client: &dyn TileClient,
    key: &ApiKey,
    out: &Path,
) -> Result<BuildReport> {
    config.ratios.validate()?;
    let seed_value = seed;
    let seed = SeedStream::new(seed);
    let parsed = parse_inventory(inventory, &config.columns)?;
    let mut rejections = String::new();
    for r in &parsed.rejections {
        rejections.push_str(&serde_json::to_string(r)?);
        rejections.push('\n');
    }
    write_atomic(&out.join(REJECTIONS_FILE), rejections.as_bytes())?;

    let top = select_top_species(&parsed.records, config.top_k)?;
    let mut warnings: Vec<String> = top.warning.iter().cloned().collect();
    let labels: Vec<&str> = top.records.iter().map(|r| r.species.as_str()).collect();
    let assignment = stratified_split(&labels, config.ratios, seed)?;
    warnings.extend(assignment.warnings);

    let requests: Vec<_> = top.records.iter().map(|r| build_tile_request(r, &config.tiles, key)).collect();
    let outcomes = fetch_tiles(&requests, client, &out.join("cache"), &config.fetch);

    let mut manifest = DatasetManifest::new(config.ratios, seed_value);
    let (mut fetched, mut cached, mut failed) = (0, 0, 0);
    for ((record, split), outcome) in top.records.iter().zip(&assignment.splits).zip(&outcomes) {
        let path = dataset_path(*split, &record.species, &sanitize_stem(&record.id));
        let status = match &outcome.status {
            FetchStatus::Failed { error, .. } => {
                failed += 1;
                warnings.push(format!("tile {} failed: {error}", record.id));
                EntryStatus::Failed
            }
            s => {
                if matches!(s, FetchStatus::Cached) {
                    cached += 1;
                } else {
                    fetched += 1;
                }
                write_atomic(&out.join(&path), &read(&outcome.path)?)?;
                EntryStatus::Complete
            }
        };
        manifest.entries.push(ManifestEntry {
            id: record.id.clone(),
            species: record.species.clone(),
            split: *split,
            lat: record.latitude,
            lon: record.longitude,
            path,
            status,
        });
    }

    let augmented = match &config.oversample {
        Some(o) => oversample(&mut manifest, o, &seed, out)?,
        None => 0,
    };
    manifest.save(&out.join(MANIFEST_FILE))?;
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(BuildReport {
        kept: parsed.records.len(),
        rejected: parsed.rejections.len(),
        ranked: top.ranked,
        warnings,
        fetched,
        cached,
        failed,
        augmented,
        manifest,
    })
}

fn sanitize_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Appends `_aug{j}` copies of train images so every class reaches the target.
fn oversample(manifest: &mut DatasetManifest, cfg: &OversampleConfig, seed: &SeedStream, out: &Path) -> Result<usize> {
    cfg.params.validate()?;
    let mut by_class: BTreeMap<String, Vec<ManifestEntry>> = BTreeMap::new();
    for e in &manifest.entries {
        if e.split == Split::Train && e.status == EntryStatus::Complete {
            by_class.entry(e.species.clone()).or_default().push(e.clone());
        }
    }
    let counts: Vec<usize> = by_class.values().map(Vec::len).collect();
    let target = cfg.target.unwrap_or_else(|| counts.iter().copied().max().unwrap_or(0));
    let plan = oversample_plan(&counts, target)?;
    let stream = seed.named("oversample");
    let mut added = Vec::new();
    for (originals, copies) in by_class.values().zip(plan) {
        for (entry, n) in originals.iter().zip(copies) {
            if n == 0 {
                continue;
            }
            let image: Tensor<f32> = decode_image(&read(&out.join(&entry.path))?, 0)?;
            let per_image = stream.named(&entry.id);
            for j in 0..n {
                let aug = augment(&image, &cfg.params, &mut per_image.child(j as u64).rng())?;
                let id = format!("{}_aug{j}", entry.id);
                let path = dataset_path(Split::Train, &entry.species, &sanitize_stem(&id));
                write_atomic(&out.join(&path), &encode_image(&aug)?)?;
                added.push(ManifestEntry { id, path, ..entry.clone() });
            }
        }
    }
    let n = added.len();
    manifest.entries.extend(added);
    Ok(n)
}

/// Loads the complete entries of one split. Class indices follow `classes`;
/// a species outside that list is rejected, since the model never saw it.
/// `crop_bottom` rows are removed from each image on load.
pub fn load_split<T: Scalar>(
    manifest: &DatasetManifest,
    root: &Path,
    split: Split,
    classes: &[String],
    crop_bottom: u32,
) -> Result<Dataset<T>> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for e in manifest.entries.iter().filter(|e| e.split == split && e.status == EntryStatus::Complete) {
        let label = classes.iter().position(|c| *c == e.species).ok_or_else(|| {
            Error::invalid(format!(
                "species {:?} in the {} split is absent from the training labels",
                e.species,
                split.name()
            ))
        })?;
        images.push(decode_image(&read(&root.join(&e.path))?, crop_bottom)?);
        labels.push(label);
    }
    Dataset::new(images, labels, classes.to_vec())
}

/// Training-split class names in sorted order.
pub fn training_classes(manifest: &DatasetManifest) -> Vec<String> {
    manifest
        .species_counts(EntryStatus::Complete)
        .into_iter()
        .filter(|(_, c)| c[Split::Train as usize] > 0)
        .map(|(s, _)| s)
        .collect()
}

/// Resolves the manifest path whether given the dataset root or the file.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}
