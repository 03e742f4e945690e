//! Training protocol: epoch loop with best-validation-loss checkpointing,
//! evaluation, stratified k-fold cross-validation and grid sweeps.

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{augment, AugmentParams};
use crate::checkpoint::{write_atomic, Checkpoint};
use crate::data::split::{stratified_kfold, stratified_split, Split, SplitRatios};
use crate::error::{Error, Result};
use crate::init::InitializerKind;
use crate::layers::softmax_cross_entropy;
use crate::metrics::{ConfusionMatrix, EvalReport};
use crate::model::{
    backward_into, build, compute_class_weights, default_filters, forward_traced, ModelParams, ModelSpec,
};
use crate::optim::{init_state, Hyper, OptimizerKind, OptimizerState};
use crate::rng::SeedStream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Labelled images, all of one shape, with class index `labels[i]` naming
/// `classes[labels[i]]`.
#[derive(Clone, Debug)]
pub struct Dataset<T> {
    pub images: Vec<Tensor<T>>,
    pub labels: Vec<usize>,
    pub classes: Vec<String>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(images: Vec<Tensor<T>>, labels: Vec<usize>, classes: Vec<String>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::invalid(format!("{} images but {} labels", images.len(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes.len()) {
            return Err(Error::invalid(format!("label {bad} out of range for {} classes", classes.len())));
        }
        if let Some(first) = images.first() {
            if let Some(odd) = images.iter().find(|i| i.shape() != first.shape()) {
                return Err(Error::shape(
                    "dataset",
                    format!("mixed image shapes {:?} and {:?}", first.shape(), odd.shape()),
                ));
            }
        }
        Ok(Dataset { images, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Dataset {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes.clone(),
        }
    }

    pub fn image_shape(&self) -> Option<[usize; 3]> {
        self.images.first().and_then(|i| i.shape().try_into().ok())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassWeighting {
    None,
    Balanced,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: u32,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// Defaults for `optimizer` when absent.
    pub hyper: Option<Hyper>,
    pub model: ModelSpec,
    pub class_weighting: ClassWeighting,
    pub seed: u64,
    /// On-the-fly augmentation of training images; `None` disables it.
    pub augmentation: Option<AugmentParams>,
}

impl TrainConfig {
    pub fn new(model: ModelSpec, optimizer: OptimizerKind, seed: u64) -> Self {
        TrainConfig {
            max_epochs: 100,
            batch_size: 32,
            optimizer,
            hyper: None,
            model,
            class_weighting: ClassWeighting::None,
            seed,
            augmentation: None,
        }
    }

    pub fn resolved_hyper(&self) -> Hyper {
        self.hyper.unwrap_or_else(|| Hyper::defaults(self.optimizer))
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("max_epochs and batch_size must be at least 1"));
        }
        self.model.validate()?;
        if let Some(a) = &self.augmentation {
            a.validate()?;
        }
        Ok(())
    }

    /// Table-style label, e.g. `x6 Conv block (adamax he_normal, 20% dropout)`.
    pub fn label(&self) -> String {
        let mut parts = vec![format!("{} {}", self.optimizer, self.model.initializer.name())];
        if self.model.dropout_rate > 0.0 {
            parts.push(format!("{}% dropout", (self.model.dropout_rate * 100.0).round()));
        }
        if self.class_weighting == ClassWeighting::Balanced {
            parts.push("balanced".into());
        }
        if self.model.kernel_size != 3 {
            parts.push(format!("{0}x{0} kernel", self.model.kernel_size));
        }
        format!("x{} Conv block ({})", self.model.n_blocks, parts.join(", "))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// First epoch attaining `best_val_loss`.
    pub best_epoch: u32,
    pub best_val_loss: f64,
}

impl TrainHistory {
    /// One JSON object per epoch.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub checkpoint: Checkpoint<T>,
    pub history: TrainHistory,
}

fn weights_as<T: Scalar>(w: &Option<Vec<f64>>) -> Option<Vec<T>> {
    w.as_ref().map(|w| w.iter().map(|&v| T::of(v)).collect())
}

/// Mean loss and confusion matrix of one inference pass (dropout off).
fn inference_pass<T: Scalar>(
    spec: &ModelSpec,
    params: &ModelParams<T>,
    data: &Dataset<T>,
    class_weights: Option<&[T]>,
) -> Result<(f64, ConfusionMatrix)> {
    let seed = SeedStream::new(0);
    let per_example: Vec<(f64, usize)> = data
        .images
        .par_iter()
        .zip(&data.labels)
        .map(|(img, &label)| {
            let trace = forward_traced(spec, params, img, false, &mut seed.rng())?;
            let (loss, _) = softmax_cross_entropy(&trace.logits, label, class_weights)?;
            Ok((loss.as_f64(), trace.logits.argmax()))
        })
        .collect::<Result<_>>()?;
    let mut confusion = ConfusionMatrix::new(spec.n_classes);
    let mut total = 0.0;
    for (&(loss, pred), &label) in per_example.iter().zip(&data.labels) {
        total += loss;
        confusion.record(label, pred);
    }
    Ok((total / data.len() as f64, confusion))
}

fn check_split<T: Scalar>(name: &str, data: &Dataset<T>, spec: &ModelSpec) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid(format!("{name} split is empty")));
    }
    if data.classes.len() != spec.n_classes {
        return Err(Error::invalid(format!(
            "{name} split has {} classes but the model predicts {}",
            data.classes.len(),
            spec.n_classes
        )));
    }
    if data.image_shape() != Some(spec.input_shape) {
        return Err(Error::shape(
            "train",
            format!("{name} images {:?} vs model input {:?}", data.image_shape(), spec.input_shape),
        ));
    }
    Ok(())
}

/// Balanced weights from the training split, or `None`.
pub fn class_weights_for<T: Scalar>(weighting: ClassWeighting, train: &Dataset<T>) -> Result<Option<Vec<f64>>> {
    match weighting {
        ClassWeighting::None => Ok(None),
        ClassWeighting::Balanced => compute_class_weights(&train.class_counts()).map(Some),
    }
}

/// Runs up to `max_epochs` epochs and keeps the parameters with the smallest
/// validation loss. When `checkpoint_path` is given, the checkpoint is
/// rewritten there on every improvement.
pub fn train<T: Scalar>(
    config: &TrainConfig,
    train_set: &Dataset<T>,
    val_set: &Dataset<T>,
    checkpoint_path: Option<&Path>,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let spec = &config.model;
    check_split("train", train_set, spec)?;
    check_split("validation", val_set, spec)?;

    let root = SeedStream::new(config.seed);
    let mut params: ModelParams<T> = build(spec, root.named("model"))?;
    let hyper = config.resolved_hyper();
    let mut states: Vec<OptimizerState<T>> =
        params.tensors().map(|t| init_state(config.optimizer, hyper, t.shape())).collect::<Result<_>>()?;
    let weights_f64 = class_weights_for(config.class_weighting, train_set)?;
    let weights: Option<Vec<T>> = weights_as(&weights_f64);

    let mut history = TrainHistory { epochs: Vec::new(), best_epoch: 0, best_val_loss: f64::INFINITY };
    let mut best: Option<Checkpoint<T>> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.max_epochs {
        let epoch_seed = |name: &str| root.named(name).child(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut epoch_seed("shuffle").rng());

        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            // Fixed chunking (independent of thread count) keeps the
            // accumulation order, and hence the result, deterministic.
            let chunk = batch.len().div_ceil(8).max(1);
            let partials: Vec<(f64, ModelParams<T>)> = batch
                .par_chunks(chunk)
                .enumerate()
                .map(|(c, members)| {
                    let mut grads = params.zeros_like();
                    let mut loss = 0.0;
                    for (j, &idx) in members.iter().enumerate() {
                        let position = (b * config.batch_size + c * chunk + j) as u64;
                        let augmented;
                        let image = match &config.augmentation {
                            Some(p) => {
                                augmented = augment(
                                    &train_set.images[idx],
                                    p,
                                    &mut epoch_seed("augment").child(position).rng(),
                                )?;
                                &augmented
                            }
                            None => &train_set.images[idx],
                        };
                        let trace = forward_traced(
                            spec,
                            &params,
                            image,
                            true,
                            &mut epoch_seed("dropout").child(position).rng(),
                        )?;
                        let (l, dlogits) =
                            softmax_cross_entropy(&trace.logits, train_set.labels[idx], weights.as_deref())?;
                        loss += l.as_f64();
                        backward_into(spec, &params, trace, dlogits, &mut grads)?;
                    }
                    Ok((loss, grads))
                })
                .collect::<Result<_>>()?;

            let mut parts = partials.into_iter();
            let (mut batch_loss, mut grads) = parts.next().expect("batch is non-empty");
            for (l, g) in parts {
                batch_loss += l;
                grads.add_assign(&g)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite { context: format!("training loss at epoch {epoch}, batch {b}") });
            }
            grads.scale(T::of(1.0 / batch.len() as f64));
            for ((p, g), s) in params.tensors_mut().zip(grads.tensors()).zip(&mut states) {
                s.update(p, g).map_err(|e| match e {
                    Error::NonFinite { context } => {
                        Error::NonFinite { context: format!("{context} at epoch {epoch}, batch {b}") }
                    }
                    other => other,
                })?;
            }
            epoch_loss += batch_loss;
        }

        let (val_loss, confusion) = inference_pass(spec, &params, val_set, weights.as_deref())?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite { context: format!("validation loss at epoch {epoch}") });
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            val_loss,
            val_accuracy: confusion.accuracy(),
        });
        log::info!(
            "epoch {epoch}: train loss {:.4}, val loss {val_loss:.4}, val acc {:.4}",
            epoch_loss / train_set.len() as f64,
            confusion.accuracy()
        );
        if val_loss < history.best_val_loss {
            history.best_val_loss = val_loss;
            history.best_epoch = epoch;
            let ck = Checkpoint { spec: spec.clone(), seed: config.seed, epoch, val_loss, params: params.clone() };
            if let Some(path) = checkpoint_path {
                ck.save(path)?;
            }
            best = Some(ck);
        }
    }
    Ok(TrainOutcome { checkpoint: best.expect("at least one epoch ran"), history })
}

/// Single inference pass over `test_set`.
pub fn evaluate<T: Scalar>(
    checkpoint: &Checkpoint<T>,
    test_set: &Dataset<T>,
    class_weights: Option<&[f64]>,
) -> Result<EvalReport> {
    let spec = &checkpoint.spec;
    check_split("test", test_set, spec)?;
    if let Some(w) = class_weights {
        if w.len() != spec.n_classes {
            return Err(Error::invalid("class weight count does not match the model"));
        }
    }
    let weights: Option<Vec<T>> = weights_as(&class_weights.map(<[f64]>::to_vec));
    let (loss, confusion) = inference_pass(spec, &checkpoint.params, test_set, weights.as_deref())?;
    Ok(EvalReport::from_confusion(confusion, Some(loss), checkpoint.epoch))
}

#[derive(Clone, Debug)]
pub struct CrossValidation {
    pub folds: Vec<EvalReport>,
    pub aggregate: EvalReport,
}

/// Share of each fold's training portion held back for checkpoint selection.
pub const CV_VALIDATION_RATIOS: SplitRatios = SplitRatios { train: 7.0 / 9.0, validate: 2.0 / 9.0, test: 0.0 };

/// Stratified k-fold: fold `i` is the test set, the other folds are split
/// 7:2 (class-proportionally) into training and checkpoint-selection data.
pub fn cross_validate<T: Scalar>(config: &TrainConfig, data: &Dataset<T>, k: usize) -> Result<CrossValidation> {
    let seed = SeedStream::new(config.seed);
    let folds = stratified_kfold(&data.labels, k, seed.named("cv"))?;
    let mut reports = Vec::with_capacity(k);
    for (i, test_idx) in folds.iter().enumerate() {
        let wrap = |e| Error::Fold { fold: i, source: Box::new(e) };
        let rest: Vec<usize> =
            folds.iter().enumerate().filter(|&(j, _)| j != i).flat_map(|(_, f)| f.iter().copied()).collect();
        let rest_labels: Vec<usize> = rest.iter().map(|&r| data.labels[r]).collect();
        let inner = stratified_split(&rest_labels, CV_VALIDATION_RATIOS, seed.named("cv-inner").child(i as u64))
            .map_err(wrap)?;
        let pick = |split| -> Vec<usize> {
            rest.iter().zip(&inner.splits).filter(|(_, &s)| s == split).map(|(&r, _)| r).collect()
        };
        let train_set = data.subset(&pick(Split::Train));
        let val_set = data.subset(&pick(Split::Validate));
        let test_set = data.subset(test_idx);
        let outcome = train(config, &train_set, &val_set, None).map_err(wrap)?;
        let weights = class_weights_for(config.class_weighting, &train_set).map_err(wrap)?;
        reports.push(evaluate(&outcome.checkpoint, &test_set, weights.as_deref()).map_err(wrap)?);
    }
    Ok(CrossValidation { aggregate: EvalReport::aggregate(&reports)?, folds: reports })
}

/// Axes of a sweep; an empty axis keeps the base configuration's value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub n_blocks: Vec<usize>,
    pub optimizer: Vec<OptimizerKind>,
    pub initializer: Vec<InitializerKind>,
    pub dropout: Vec<f64>,
    pub class_weighting: Vec<ClassWeighting>,
}

/// Filter counts for `n` blocks: the base list's prefix, extended by the
/// default schedule when it is too short.
fn filters_for(base: &[usize], n: usize) -> Vec<usize> {
    let defaults = default_filters(n);
    (0..n).map(|i| base.get(i).copied().unwrap_or(defaults[i])).collect()
}

impl SweepGrid {
    /// Cartesian product in axis order (blocks, optimizer, initializer,
    /// dropout, weighting), last axis fastest.
    pub fn expand(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        fn axis<V: Clone>(values: &[V], fallback: V) -> Vec<V> {
            if values.is_empty() {
                vec![fallback]
            } else {
                values.to_vec()
            }
        }
        let mut out = Vec::new();
        for n in axis(&self.n_blocks, base.model.n_blocks) {
            for opt in axis(&self.optimizer, base.optimizer) {
                for init in axis(&self.initializer, base.model.initializer) {
                    for &drop in &axis(&self.dropout, base.model.dropout_rate) {
                        for weighting in axis(&self.class_weighting, base.class_weighting) {
                            let mut cfg = base.clone();
                            cfg.model.n_blocks = n;
                            cfg.model.filters_per_block = filters_for(&base.model.filters_per_block, n);
                            if opt != base.optimizer {
                                cfg.hyper = None;
                            }
                            cfg.optimizer = opt;
                            cfg.model.initializer = init;
                            cfg.model.dropout_rate = drop;
                            cfg.class_weighting = weighting;
                            out.push(cfg);
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct SweepRun {
    pub config: TrainConfig,
    pub outcome: std::result::Result<EvalReport, String>,
}

impl SweepRun {
    pub fn label(&self) -> String {
        self.config.label()
    }
}

/// Trains and tests every grid combination. Failed runs are kept as rows with
/// their error; the result is sorted by test accuracy, best first, failures last.
pub fn sweep<T: Scalar>(
    grid: &SweepGrid,
    base: &TrainConfig,
    train_set: &Dataset<T>,
    val_set: &Dataset<T>,
    test_set: &Dataset<T>,
) -> Result<Vec<SweepRun>> {
    let configs = grid.expand(base);
    if configs.is_empty() {
        return Err(Error::invalid("empty sweep grid"));
    }
    let mut runs: Vec<SweepRun> = configs
        .into_iter()
        .map(|config| {
            let outcome = (|| {
                let trained = train(&config, train_set, val_set, None)?;
                let weights = class_weights_for(config.class_weighting, train_set)?;
                evaluate(&trained.checkpoint, test_set, weights.as_deref())
            })()
            .map_err(|e| {
                log::warn!("sweep run {} failed: {e}", config.label());
                e.to_string()
            });
            SweepRun { config, outcome }
        })
        .collect();
    let key = |r: &SweepRun| r.outcome.as_ref().map(|rep| rep.accuracy).unwrap_or(f64::NEG_INFINITY);
    runs.sort_by(|a, b| key(b).partial_cmp(&key(a)).unwrap());
    Ok(runs)
}

/// Writes the history as line-delimited JSON.
pub fn save_history(history: &TrainHistory, path: &Path) -> Result<()> {
    write_atomic(path, history.to_jsonl()?.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> TrainConfig {
        let mut spec = ModelSpec::new(1, [8, 8, 3], 2);
        spec.filters_per_block = vec![4];
        TrainConfig::new(spec, OptimizerKind::Sgd, 1)
    }

    #[test]
    fn grid_is_cartesian() {
        let grid = SweepGrid {
            n_blocks: vec![1, 2],
            optimizer: vec![OptimizerKind::Sgd, OptimizerKind::Adamax],
            ..SweepGrid::default()
        };
        let configs = grid.expand(&base());
        assert_eq!(configs.len(), 4);
        let pairs: Vec<(usize, OptimizerKind)> = configs.iter().map(|c| (c.model.n_blocks, c.optimizer)).collect();
        assert_eq!(
            pairs,
            vec![
                (1, OptimizerKind::Sgd),
                (1, OptimizerKind::Adamax),
                (2, OptimizerKind::Sgd),
                (2, OptimizerKind::Adamax)
            ]
        );
        assert_eq!(configs[2].model.filters_per_block, vec![4, 64]);
    }

    #[test]
    fn labels_follow_table_naming() {
        let mut cfg = base();
        cfg.model.n_blocks = 6;
        cfg.optimizer = OptimizerKind::Adamax;
        cfg.model.initializer = InitializerKind::HeNormal;
        assert_eq!(cfg.label(), "x6 Conv block (adamax he_normal)");
        cfg.model.dropout_rate = 0.2;
        assert_eq!(cfg.label(), "x6 Conv block (adamax he_normal, 20% dropout)");
    }

    #[test]
    fn empty_split_rejected() {
        let cfg = base();
        let empty = Dataset::<f32>::new(vec![], vec![], vec!["a".into(), "b".into()]).unwrap();
        let one = Dataset::new(vec![Tensor::zeros(&[8, 8, 3])], vec![0], vec!["a".into(), "b".into()]).unwrap();
        assert!(train(&cfg, &empty, &one, None).is_err());
        assert!(train(&cfg, &one, &empty, None).is_err());
    }
}
