//! Experiment configuration: data windowing, model profile, optimizer and
//! loss settings, pretext task, and the desk-scale profile used for
//! single-CPU runs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pulsebench_core::losses::{LossConfig, LossWeights};
use pulsebench_core::mstmap::{RowsMode, DEFAULT_CHUNKS};
use pulsebench_core::rppg::Method;
use pulsebench_core::synth::{BenchmarkConfig, ChannelSet};
use pulsebench_core::FreqBand;
use pulsebench_model::ModelConfig;

use crate::error::{HarnessError, Result};
use crate::optim::AdamWConfig;

/// Heart rates are mapped affinely from this bpm range to `[0, 1]`.
pub const HR_SCALE_BPM: (f64, f64) = (42.0, 180.0);

pub fn scale_hr(bpm: f64) -> f64 {
    (bpm - HR_SCALE_BPM.0) / (HR_SCALE_BPM.1 - HR_SCALE_BPM.0)
}

pub fn unscale_hr(u: f64) -> f64 {
    HR_SCALE_BPM.0 + u * (HR_SCALE_BPM.1 - HR_SCALE_BPM.0)
}

/// Midpoint of the heart-rate range, the constant "chance" predictor.
pub fn band_midpoint_bpm() -> f64 {
    0.5 * (HR_SCALE_BPM.0 + HR_SCALE_BPM.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    /// The regression head's output, rescaled to bpm.
    #[default]
    Head,
    /// Spectral peak of the mean reconstructed map row.
    Map,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Epochs for linear probing and transfer.
    pub finetune_epochs: usize,
    /// Window length `T` in frames.
    pub window: usize,
    /// Training window stride in frames; test windows never overlap.
    pub stride: usize,
    pub seed: u64,
    /// Optional cap on optimizer steps, applied after the epoch count.
    pub max_steps: Option<usize>,
    /// Step cap for pre-training; falls back to `max_steps`.
    pub pretrain_max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let o = AdamWConfig::default();
        Self {
            lr: o.lr,
            weight_decay: o.weight_decay,
            beta1: o.beta1,
            beta2: o.beta2,
            epsilon: o.epsilon,
            batch: 8,
            epochs: 50,
            finetune_epochs: 25,
            window: 576,
            stride: 30,
            seed: 0,
            max_steps: None,
            pretrain_max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adamw().validate()?;
        if self.batch == 0 || self.window == 0 || self.stride == 0 {
            return Err(HarnessError::config("batch, window and stride must be positive"));
        }
        if self.max_steps == Some(0) || self.pretrain_max_steps == Some(0) {
            return Err(HarnessError::config("max_steps must be positive when set"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Temporal chunks stacked vertically; 1 keeps the rows x T rectangle.
    pub chunks: usize,
    pub rows_mode: RowsMode,
    pub band: FreqBand,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { chunks: DEFAULT_CHUNKS, rows_mode: RowsMode::Channels, band: FreqBand::HR }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSettings {
    pub weights: LossWeights,
    pub config: LossConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PretextTarget {
    /// Reconstruct the MSTmap from a patch-masked copy.
    #[default]
    Mask,
    /// Predict a pseudo-BVP map from the unmasked MSTmap.
    Pbvp,
    /// No image task; only the pseudo heart rate trains.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskStage {
    /// Mask patches of the stacked (padded) image.
    #[default]
    Stacked,
    /// Mask patches of the rows x T map before stacking.
    Rows,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskSpec {
    pub ratio: f64,
    pub patch: usize,
    pub seed: u64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self { ratio: 0.75, patch: 4, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretextConfig {
    pub target: PretextTarget,
    /// Traditional method supplying pseudo heart rates; `None` disables
    /// the regression pretext.
    pub pseudo: Option<Method>,
    /// Method building pseudo-BVP maps for the `pbvp` target.
    pub pbvp_method: Method,
    pub mask: MaskSpec,
    pub mask_stage: MaskStage,
    pub mask_fill: f64,
    pub loss_on_masked_only: bool,
}

impl Default for PretextConfig {
    fn default() -> Self {
        Self {
            target: PretextTarget::Mask,
            pseudo: Some(Method::Chrom),
            pbvp_method: Method::Chrom,
            mask: MaskSpec::default(),
            mask_stage: MaskStage::Stacked,
            mask_fill: 0.0,
            loss_on_masked_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Generator settings, used when `data_dir` is unset.
    pub benchmark: BenchmarkConfig,
    /// Benchmark directory written by `synth`.
    pub data_dir: Option<PathBuf>,
    /// Unlabeled benchmark for pre-training; defaults to `benchmark` with a
    /// different seed.
    pub pretrain_benchmark: Option<BenchmarkConfig>,
    pub data: DataConfig,
    /// Model profile; input extent and channels are derived from the data.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossSettings,
    pub folds: usize,
    pub fold_seed: u64,
    /// Folds to run; all folds when unset.
    pub run_folds: Option<Vec<usize>>,
    pub readout: Readout,
    pub pretext: PretextConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            benchmark: BenchmarkConfig::default(),
            data_dir: None,
            pretrain_benchmark: None,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            loss: LossSettings::default(),
            folds: 5,
            fold_seed: 0,
            run_folds: None,
            readout: Readout::Head,
            pretext: PretextConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Single-CPU profile: 40 subjects with two ROIs and RGB channels (a
    /// 16 x 192 x 3 model input at `T = 576`), the small model, a larger
    /// learning rate and a step budget, evaluated on one fold.
    pub fn desk() -> Self {
        let benchmark = BenchmarkConfig {
            n_subjects: 40,
            windows_per_subject: 3,
            n_rois: 2,
            channels: ChannelSet::Rgb,
            ..BenchmarkConfig::default()
        };
        Self {
            benchmark,
            model: ModelConfig::desk([16, 192], 3),
            train: TrainConfig {
                lr: 1e-3,
                max_steps: Some(300),
                pretrain_max_steps: Some(1000),
                ..TrainConfig::default()
            },
            run_folds: Some(vec![0]),
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| HarnessError::config(e.to_string()))?,
            _ => toml::from_str(&text)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.loss.weights.validate().map_err(|e| HarnessError::config(e.to_string()))?;
        if self.data.chunks == 0 || !self.train.window.is_multiple_of(self.data.chunks) {
            return Err(HarnessError::config(format!(
                "window {} is not divisible into {} chunks",
                self.train.window, self.data.chunks
            )));
        }
        if self.folds < 2 {
            return Err(HarnessError::config("at least two folds are needed"));
        }
        if let Some(f) = &self.run_folds {
            if f.is_empty() || f.iter().any(|&i| i >= self.folds) {
                return Err(HarnessError::config("run_folds must name existing folds"));
            }
        }
        let m = &self.pretext.mask;
        if !(m.ratio > 0.0 && m.ratio < 1.0) || m.patch == 0 {
            return Err(HarnessError::config("mask ratio must lie in (0, 1) with a positive patch"));
        }
        if !(self.model.with_hr_head || self.readout == Readout::Map) {
            return Err(HarnessError::config("a model without HR head needs readout = map"));
        }
        Ok(())
    }

    /// Benchmark used for pre-training.
    pub fn pretrain_benchmark(&self) -> BenchmarkConfig {
        self.pretrain_benchmark.clone().unwrap_or_else(|| BenchmarkConfig {
            seed: self.benchmark.seed.wrapping_add(1_000_003),
            ..self.benchmark.clone()
        })
    }

    /// Training settings used for pre-training.
    pub fn pretrain_train(&self) -> TrainConfig {
        TrainConfig { max_steps: self.train.pretrain_max_steps.or(self.train.max_steps), ..self.train.clone() }
    }

    pub fn fold_indices(&self) -> Vec<usize> {
        self.run_folds.clone().unwrap_or_else(|| (0..self.folds).collect())
    }
}
