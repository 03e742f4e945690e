//! Run configuration: a TOML document with one section per stage. Values
//! resolve as command-line flags, then the file, then built-in defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use treecnn::augment::AugmentParams;
use treecnn::data::pipeline::DatasetConfig;
use treecnn::init::InitializerKind;
use treecnn::model::{default_filters, ModelSpec};
use treecnn::optim::{Hyper, OptimizerKind};
use treecnn::train::{ClassWeighting, SweepGrid, TrainConfig};

use crate::Failure;

pub const RESOLVED_CONFIG: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub n_blocks: usize,
    pub kernel_size: usize,
    /// Defaults to 32, 64, 128, 256, 256, 256 truncated to `n_blocks`.
    pub filters_per_block: Option<Vec<usize>>,
    pub fc_width: usize,
    pub dropout_rate: f64,
    pub initializer: InitializerKind,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            n_blocks: 6,
            kernel_size: 3,
            filters_per_block: None,
            fc_width: 128,
            dropout_rate: 0.0,
            initializer: InitializerKind::HeNormal,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub max_epochs: u32,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub rho: Option<f64>,
    pub epsilon: Option<f64>,
    pub class_weighting: ClassWeighting,
    pub augmentation: Option<AugmentParams>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            max_epochs: 100,
            batch_size: 32,
            optimizer: OptimizerKind::Adamax,
            learning_rate: None,
            beta1: None,
            beta2: None,
            rho: None,
            epsilon: None,
            class_weighting: ClassWeighting::None,
            augmentation: None,
        }
    }
}

impl TrainSection {
    pub fn hyper(&self) -> Hyper {
        let d = Hyper::defaults(self.optimizer);
        Hyper {
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            beta1: self.beta1.unwrap_or(d.beta1),
            beta2: self.beta2.unwrap_or(d.beta2),
            rho: self.rho.unwrap_or(d.rho),
            epsilon: self.epsilon.unwrap_or(d.epsilon),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub folds: usize,
}

impl Default for CvSection {
    fn default() -> Self {
        CvSection { folds: 5 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub grid: SweepGrid,
    /// Re-run cross-validation on this many of the best rows.
    pub cv_top: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub model: ModelSection,
    pub train: TrainSection,
    pub cv: CvSection,
    pub sweep: SweepSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            dataset: DatasetConfig::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            cv: CvSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| treecnn::Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {}", path.display(), e.message())))
    }

    /// Fills every optional knob with the value that will actually be used.
    pub fn resolve(&mut self) {
        let given = self.model.filters_per_block.take().unwrap_or_default();
        let defaults = default_filters(self.model.n_blocks.clamp(1, treecnn::model::MAX_BLOCKS));
        let filters =
            (0..self.model.n_blocks).map(|i| given.get(i).or(defaults.get(i)).copied().unwrap_or(256)).collect();
        self.model.filters_per_block = Some(filters);
        let h = self.train.hyper();
        self.train.learning_rate = Some(h.learning_rate);
        self.train.beta1 = Some(h.beta1);
        self.train.beta2 = Some(h.beta2);
        self.train.rho = Some(h.rho);
        self.train.epsilon = Some(h.epsilon);
    }

    pub fn model_spec(&self, input_shape: [usize; 3], n_classes: usize) -> ModelSpec {
        let m = &self.model;
        ModelSpec {
            n_blocks: m.n_blocks,
            kernel_size: m.kernel_size,
            filters_per_block: m.filters_per_block.clone().unwrap_or_else(|| default_filters(m.n_blocks)),
            fc_width: m.fc_width,
            dropout_rate: m.dropout_rate,
            initializer: m.initializer,
            input_shape,
            n_classes,
        }
    }

    pub fn train_config(&self, input_shape: [usize; 3], n_classes: usize) -> TrainConfig {
        TrainConfig {
            max_epochs: self.train.max_epochs,
            batch_size: self.train.batch_size,
            optimizer: self.train.optimizer,
            hyper: Some(self.train.hyper()),
            model: self.model_spec(input_shape, n_classes),
            class_weighting: self.train.class_weighting,
            seed: self.seed,
            augmentation: self.train.augmentation,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is representable as TOML")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_defaults_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.train.augmentation = Some(AugmentParams::default());
        cfg.resolve();
        let text = cfg.to_toml();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.model.filters_per_block.as_deref(), Some(&[32, 64, 128, 256, 256, 256][..]));
        assert_eq!(back.train.learning_rate, Some(0.002));
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: RunConfig = toml::from_str("seed = 7\n[model]\nn_blocks = 2\n[train]\noptimizer = \"sgd\"\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.model.fc_width, 128);
        assert_eq!(cfg.train.hyper().learning_rate, 0.01);
        assert_eq!(cfg.dataset.top_k, 6);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("[model]\nblocks = 2\n").is_err());
    }

    #[test]
    fn shorter_filter_list_is_extended() {
        let mut cfg = RunConfig::default();
        cfg.model.n_blocks = 3;
        cfg.model.filters_per_block = Some(vec![8]);
        cfg.resolve();
        assert_eq!(cfg.model.filters_per_block, Some(vec![8, 64, 128]));
    }
}
