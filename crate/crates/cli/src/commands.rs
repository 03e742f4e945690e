//! Subcommand bodies.

use std::path::{Path, PathBuf};

use serde::Serialize;
use treecnn::augment::AugmentParams;
use treecnn::checkpoint::{write_atomic, Checkpoint};
use treecnn::data::inventory::{parse_inventory, select_top_species};
use treecnn::data::manifest::{DatasetManifest, EntryStatus};
use treecnn::data::pipeline::{build_dataset, load_split, manifest_path, training_classes, OversampleConfig};
use treecnn::data::tiles::{build_tile_request, ApiKey, MockTileClient, TileClient};
use treecnn::data::Split;
use treecnn::metrics::EvalReport;
use treecnn::model::compute_class_weights;
use treecnn::report::{read_results_csv, render_summary, render_table, write_results_csv, ResultRow};
use treecnn::synthetic::species_tile_renderer;
use treecnn::train::{self, ClassWeighting, CrossValidation, Dataset, TrainConfig};

use crate::config::{RunConfig, RESOLVED_CONFIG};
use crate::grid::apply_grid_terms;
use crate::live::HttpTileClient;
use crate::{BuildArgs, Common, CvArgs, EvalArgs, Failure, ModelFlags, ReportArgs, SweepArgs, TrainArgs};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const CLASSES_FILE: &str = "classes.json";

type Outcome = Result<(), Failure>;

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn apply_model_flags(cfg: &mut RunConfig, f: &ModelFlags) {
    let t = &mut cfg.train;
    let m = &mut cfg.model;
    if let Some(v) = f.epochs {
        t.max_epochs = v;
    }
    if let Some(v) = f.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = f.blocks {
        m.n_blocks = v;
    }
    if let Some(v) = &f.filters {
        m.filters_per_block = Some(v.clone());
    }
    if let Some(v) = f.fc_width {
        m.fc_width = v;
    }
    if let Some(v) = f.dropout {
        m.dropout_rate = v;
    }
    if let Some(v) = f.initializer {
        m.initializer = v;
    }
    if let Some(v) = f.optimizer {
        if v != t.optimizer {
            // Hyperparameters from the file belonged to the other optimizer.
            t.learning_rate = None;
            t.beta1 = None;
            t.beta2 = None;
            t.rho = None;
            t.epsilon = None;
        }
        t.optimizer = v;
    }
    if let Some(v) = f.lr {
        t.learning_rate = Some(v);
    }
    if let Some(v) = f.class_weighting {
        t.class_weighting = v;
    }
    if f.augment && t.augmentation.is_none() {
        t.augmentation = Some(AugmentParams::default());
    }
}

fn write_file(path: &Path, contents: &str) -> Outcome {
    write_atomic(path, contents.as_bytes()).map_err(Failure::from)
}

/// Resolves the config and records it in `out`.
fn finalize_config(mut cfg: RunConfig, out: &Path) -> Result<RunConfig, Failure> {
    cfg.resolve();
    write_file(&out.join(RESOLVED_CONFIG), &cfg.to_toml())?;
    Ok(cfg)
}

pub fn dataset_build(a: BuildArgs) -> Outcome {
    let mut cfg = load_config(&a.common)?;
    let d = &mut cfg.dataset;
    if let Some(k) = a.top_k {
        d.top_k = k;
    }
    if let Some(size) = a.tile_size {
        d.tiles.width = size;
        d.tiles.height = size;
    }
    if let Some(z) = a.zoom {
        d.tiles.zoom = z;
    }
    if a.oversample {
        let o = d.oversample.get_or_insert_with(OversampleConfig::default);
        if a.oversample_target.is_some() {
            o.target = a.oversample_target;
        }
    }
    let inventory = std::fs::read(&a.inventory).map_err(|e| treecnn::Error::io(&a.inventory, e))?;

    // Resolve credentials before anything touches the network or the disk.
    let (key, client): (ApiKey, Box<dyn TileClient>) = if a.mock_tiles {
        let key = ApiKey::new("offline");
        let parsed = parse_inventory(&inventory, &cfg.dataset.columns)?;
        let top = select_top_species(&parsed.records, cfg.dataset.top_k.max(1))?;
        let requests: Vec<_> = top.records.iter().map(|r| build_tile_request(r, &cfg.dataset.tiles, &key)).collect();
        let species: Vec<String> = top.records.iter().map(|r| r.species.clone()).collect();
        let t = &cfg.dataset.tiles;
        let client = MockTileClient::with_renderer(species_tile_renderer(&requests, &species, t.width, t.height));
        cfg.dataset.fetch.requests_per_second = 0.0;
        (key, Box::new(client))
    } else {
        (ApiKey::from_env()?, Box::new(HttpTileClient::new()))
    };

    let cfg = finalize_config(cfg, &a.common.out)?;
    let report = build_dataset(&inventory, &cfg.dataset, cfg.seed, client.as_ref(), &key, &a.common.out)?;
    println!("kept {} records, rejected {}", report.kept, report.rejected);
    println!(
        "tiles: {} fetched, {} cached, {} failed; {} augmented",
        report.fetched, report.cached, report.failed, report.augmented
    );
    println!("{:<28} {:>6} {:>8} {:>6}", "species", "train", "validate", "test");
    for (species, c) in report.manifest.species_counts(EntryStatus::Complete) {
        println!("{species:<28} {:>6} {:>8} {:>6}", c[0], c[1], c[2]);
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

struct Loaded {
    manifest: DatasetManifest,
    classes: Vec<String>,
    root: PathBuf,
    crop: u32,
}

fn open_dataset(data: &Path, cfg: &RunConfig, classes: Option<Vec<String>>) -> Result<Loaded, Failure> {
    let path = manifest_path(data);
    let manifest = DatasetManifest::load(&path)?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let classes = classes.unwrap_or_else(|| training_classes(&manifest));
    if classes.is_empty() {
        return Err(Failure::Core(treecnn::Error::InvalidArgument("dataset has no complete training images".into())));
    }
    Ok(Loaded { manifest, classes, root, crop: cfg.dataset.tiles.crop_bottom_px })
}

impl Loaded {
    fn split(&self, split: Split) -> Result<Dataset<f32>, Failure> {
        Ok(load_split(&self.manifest, &self.root, split, &self.classes, self.crop)?)
    }

    fn all(&self) -> Result<Dataset<f32>, Failure> {
        let mut data = self.split(Split::Train)?;
        for s in [Split::Validate, Split::Test] {
            let part = self.split(s)?;
            data.images.extend(part.images);
            data.labels.extend(part.labels);
        }
        Ok(data)
    }

    fn train_config(&self, cfg: &RunConfig, sample: &Dataset<f32>) -> Result<TrainConfig, Failure> {
        let shape = sample
            .image_shape()
            .ok_or_else(|| Failure::Core(treecnn::Error::InvalidArgument("training split is empty".into())))?;
        Ok(cfg.train_config(shape, self.classes.len()))
    }

    /// Balanced weights from the manifest's training counts, without decoding images.
    fn class_weights(&self, weighting: ClassWeighting) -> Result<Option<Vec<f64>>, Failure> {
        if weighting == ClassWeighting::None {
            return Ok(None);
        }
        let counts = self.manifest.species_counts(EntryStatus::Complete);
        let per_class: Vec<usize> =
            self.classes.iter().map(|c| counts.get(c).map_or(0, |n| n[Split::Train as usize])).collect();
        Ok(Some(compute_class_weights(&per_class)?))
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

pub fn train(a: TrainArgs) -> Outcome {
    let mut cfg = load_config(&a.common)?;
    apply_model_flags(&mut cfg, &a.model);
    let cfg = finalize_config(cfg, &a.common.out)?;
    let data = open_dataset(&a.data, &cfg, None)?;
    let train_set = data.split(Split::Train)?;
    let val_set = data.split(Split::Validate)?;
    let tc = data.train_config(&cfg, &train_set)?;
    let out = &a.common.out;
    write_file(&out.join(CLASSES_FILE), &to_json(&data.classes))?;
    let outcome = train::train(&tc, &train_set, &val_set, Some(&out.join(CHECKPOINT_FILE)))?;
    train::save_history(&outcome.history, &out.join(HISTORY_FILE))?;
    println!(
        "{}: best epoch {} of {}, validation loss {:.4}",
        tc.label(),
        outcome.history.best_epoch,
        outcome.history.epochs.len(),
        outcome.history.best_val_loss
    );
    Ok(())
}

fn print_rows(rows: &[ResultRow]) {
    print!("{}", render_table(rows));
}

pub fn eval(a: EvalArgs) -> Outcome {
    let ckpt_dir = a.checkpoint.parent().map(Path::to_path_buf).unwrap_or_default();
    // The training run's own config and class list take precedence over defaults.
    let mut common = a.common.clone();
    if common.config.is_none() && ckpt_dir.join(RESOLVED_CONFIG).is_file() {
        common.config = Some(ckpt_dir.join(RESOLVED_CONFIG));
    }
    let cfg = finalize_config(load_config(&common)?, &a.common.out)?;
    let classes = match std::fs::read_to_string(ckpt_dir.join(CLASSES_FILE)) {
        Ok(text) => Some(serde_json::from_str::<Vec<String>>(&text).map_err(treecnn::Error::from)?),
        Err(_) => None,
    };
    let data = open_dataset(&a.data, &cfg, classes)?;
    let checkpoint = Checkpoint::<f32>::load(&a.checkpoint)?;
    let set = data.split(a.split)?;
    let weights = data.class_weights(cfg.train.class_weighting)?;
    let report = train::evaluate(&checkpoint, &set, weights.as_deref())?;
    let label = TrainConfig {
        model: checkpoint.spec.clone(),
        ..cfg.train_config(checkpoint.spec.input_shape, checkpoint.spec.n_classes)
    }
    .label();
    let rows = vec![ResultRow::from_report(label, &report)];
    let out = &a.common.out;
    write_file(&out.join("eval.csv"), &write_results_csv(&rows)?)?;
    write_file(&out.join("eval.json"), &to_json(&report))?;
    print_rows(&rows);
    Ok(())
}

fn cv_rows(label: &str, cv: &CrossValidation) -> Vec<ResultRow> {
    let k = cv.folds.len();
    let mut rows: Vec<ResultRow> = cv
        .folds
        .iter()
        .enumerate()
        .map(|(i, r)| ResultRow::from_report(format!("{label} fold {}", i + 1), r))
        .collect();
    rows.push(ResultRow::from_report(format!("{label} {k}-fold Cross Val"), &cv.aggregate));
    rows
}

#[derive(Serialize)]
struct CvRecord<'a> {
    model: String,
    folds: &'a [EvalReport],
    aggregate: &'a EvalReport,
}

pub fn cv(a: CvArgs) -> Outcome {
    let mut cfg = load_config(&a.common)?;
    apply_model_flags(&mut cfg, &a.model);
    if let Some(k) = a.folds {
        cfg.cv.folds = k;
    }
    let cfg = finalize_config(cfg, &a.common.out)?;
    let data = open_dataset(&a.data, &cfg, None)?;
    let all = data.all()?;
    let tc = data.train_config(&cfg, &all)?;
    let result = train::cross_validate(&tc, &all, cfg.cv.folds)?;
    let rows = cv_rows(&tc.label(), &result);
    let out = &a.common.out;
    write_file(&out.join("cv.csv"), &write_results_csv(&rows)?)?;
    write_file(
        &out.join("cv.json"),
        &to_json(&CvRecord { model: tc.label(), folds: &result.folds, aggregate: &result.aggregate }),
    )?;
    print_rows(&rows);
    Ok(())
}

#[derive(Serialize)]
struct SweepRecord<'a> {
    model: String,
    config: &'a TrainConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<&'a EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

pub fn sweep(a: SweepArgs) -> Outcome {
    let mut cfg = load_config(&a.common)?;
    apply_model_flags(&mut cfg, &a.model);
    apply_grid_terms(&mut cfg.sweep.grid, &a.grid).map_err(Failure::Usage)?;
    if let Some(n) = a.cv_top {
        cfg.sweep.cv_top = n;
    }
    if let Some(k) = a.folds {
        cfg.cv.folds = k;
    }
    let cfg = finalize_config(cfg, &a.common.out)?;
    let data = open_dataset(&a.data, &cfg, None)?;
    let train_set = data.split(Split::Train)?;
    let val_set = data.split(Split::Validate)?;
    let test_set = data.split(Split::Test)?;
    let base = data.train_config(&cfg, &train_set)?;
    let runs = train::sweep(&cfg.sweep.grid, &base, &train_set, &val_set, &test_set)?;

    let mut rows = Vec::new();
    let mut records = String::new();
    for run in &runs {
        let (report, error) = match &run.outcome {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.as_str())),
        };
        rows.push(report.map_or_else(|| ResultRow::failed(run.label()), |r| ResultRow::from_report(run.label(), r)));
        let record = SweepRecord { model: run.label(), config: &run.config, report, error };
        records.push_str(&serde_json::to_string(&record).map_err(treecnn::Error::from)?);
        records.push('\n');
    }
    let out = &a.common.out;
    write_file(&out.join("sweep.csv"), &write_results_csv(&rows)?)?;
    write_file(&out.join("sweep_configs.jsonl"), &records)?;
    print_rows(&rows);

    if cfg.sweep.cv_top > 0 {
        let all = data.all()?;
        let mut cv_table = Vec::new();
        for run in runs.iter().filter(|r| r.outcome.is_ok()).take(cfg.sweep.cv_top) {
            match train::cross_validate(&run.config, &all, cfg.cv.folds) {
                Ok(cv) => cv_table.push(cv_rows(&run.label(), &cv).pop().expect("aggregate row")),
                Err(e) => {
                    log::warn!("cross-validation of {} failed: {e}", run.label());
                    cv_table.push(ResultRow::failed(format!("{} {}-fold Cross Val", run.label(), cfg.cv.folds)));
                }
            }
        }
        write_file(&out.join("sweep_cv.csv"), &write_results_csv(&cv_table)?)?;
        print_rows(&cv_table);
    }
    Ok(())
}

pub fn report(a: ReportArgs) -> Outcome {
    finalize_config(load_config(&a.common)?, &a.common.out)?;
    let mut tables = Vec::new();
    let mut merged = Vec::new();
    for path in &a.tables {
        let text = std::fs::read_to_string(path).map_err(|e| treecnn::Error::io(path, e))?;
        let rows = read_results_csv(&text)?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        merged.extend(rows.iter().cloned());
        tables.push((name, rows));
    }
    merged.sort_by(|x, y| {
        y.accuracy_pct.unwrap_or(f64::NEG_INFINITY).total_cmp(&x.accuracy_pct.unwrap_or(f64::NEG_INFINITY))
    });
    let summary = render_summary(&tables);
    let out = &a.common.out;
    write_file(&out.join("summary.md"), &summary)?;
    write_file(&out.join("summary.csv"), &write_results_csv(&merged)?)?;
    print!("{summary}");
    Ok(())
}
