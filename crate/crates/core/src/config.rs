//! Flat JSON experiment configuration. Unknown keys are rejected and every
//! missing key takes its default.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fscil::{SessionSpec, Strategy, TrainConfig};
use crate::kpd::{FactorScaling, KpdConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub base_classes: usize,
    pub base_samples_per_class: usize,
    pub num_incremental: usize,
    pub ways: usize,
    pub shots: usize,
    pub test_samples_per_class: usize,
    pub noise_sigma: f64,
    pub input_dim: usize,
    pub seed: u64,

    pub rank_r: usize,
    pub lambda0: f64,
    pub inverse_threshold: f64,
    pub max_doublings: usize,
    pub adapter_scaling: FactorScaling,

    pub k_layers: usize,
    pub strategy: Strategy,
    pub base_epochs: usize,
    pub base_lr: f64,
    pub base_batch_size: usize,
    pub lr_clf: f64,
    /// `null` means `0.1 * lr_clf`.
    pub lr_adapter: Option<f64>,
    pub iterations: usize,
    pub rehearsal_batch_size: usize,
    pub temperature: f64,

    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::from_parts(
            &SessionSpec::default(),
            &TrainConfig::default(),
            Strategy::Ckpd,
            PathBuf::from("out"),
        )
    }
}

impl ExperimentConfig {
    pub fn from_parts(spec: &SessionSpec, train: &TrainConfig, strategy: Strategy, output_dir: PathBuf) -> Self {
        Self {
            base_classes: spec.base_classes,
            base_samples_per_class: spec.base_samples_per_class,
            num_incremental: spec.num_incremental,
            ways: spec.ways,
            shots: spec.shots,
            test_samples_per_class: spec.test_samples_per_class,
            noise_sigma: spec.noise_sigma,
            input_dim: spec.input_dim,
            seed: spec.seed,
            rank_r: train.kpd.rank_r,
            lambda0: train.kpd.lambda0,
            inverse_threshold: train.kpd.inverse_threshold,
            max_doublings: train.kpd.max_doublings,
            adapter_scaling: train.kpd.scaling,
            k_layers: train.k_layers,
            strategy,
            base_epochs: train.base_epochs,
            base_lr: train.base_lr,
            base_batch_size: train.base_batch_size,
            lr_clf: train.lr_clf,
            lr_adapter: train.lr_adapter,
            iterations: train.iterations,
            rehearsal_batch_size: train.rehearsal_batch_size,
            temperature: train.temperature,
            output_dir,
        }
    }

    pub fn session_spec(&self) -> SessionSpec {
        SessionSpec {
            base_classes: self.base_classes,
            base_samples_per_class: self.base_samples_per_class,
            num_incremental: self.num_incremental,
            ways: self.ways,
            shots: self.shots,
            test_samples_per_class: self.test_samples_per_class,
            noise_sigma: self.noise_sigma,
            input_dim: self.input_dim,
            seed: self.seed,
        }
    }

    pub fn kpd(&self) -> KpdConfig {
        KpdConfig {
            rank_r: self.rank_r,
            lambda0: self.lambda0,
            inverse_threshold: self.inverse_threshold,
            max_doublings: self.max_doublings,
            scaling: self.adapter_scaling,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            kpd: self.kpd(),
            k_layers: self.k_layers,
            base_epochs: self.base_epochs,
            base_lr: self.base_lr,
            base_batch_size: self.base_batch_size,
            lr_clf: self.lr_clf,
            lr_adapter: self.lr_adapter,
            iterations: self.iterations,
            rehearsal_batch_size: self.rehearsal_batch_size,
            temperature: self.temperature,
        }
    }

    /// Checks every field; the backbone has six linear layers with a
    /// narrowest width of 32, which bounds `k_layers` and `rank_r`.
    pub fn validate(&self) -> Result<()> {
        self.session_spec().validate()?;
        self.train_config().validate()?;
        let n_layers = crate::net::DEFAULT_WIDTHS.len() - 1;
        if self.k_layers > n_layers {
            return Err(Error::TooManyLayers { k: self.k_layers, n: n_layers });
        }
        let min_dim = crate::net::DEFAULT_WIDTHS[1..]
            .iter()
            .copied()
            .chain([self.input_dim])
            .min()
            .unwrap_or(0);
        if self.rank_r >= min_dim {
            return Err(Error::RankTooLarge { rank: self.rank_r, max: min_dim });
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
