//! Run configuration. Every hyperparameter is explicit in one TOML file; the
//! templates under `configs/` hold the documented defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::action_area::ActionAreaParams;
use crate::ema::EmaSchedule;
use crate::error::FilsError;
use crate::losses::LossWeights;
use crate::model::{EncoderConfig, ModelConfig};
use crate::synthgen::DataConfig;
use crate::tokenize::{GridDims, PatchSpec};
use crate::Result;

pub const TOY_TOML: &str = include_str!("../configs/toy.toml");
pub const CI_TOML: &str = include_str!("../configs/ci.toml");
pub const LARGE_TOML: &str = include_str!("../configs/large.toml");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskConfig {
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmaConfig {
    pub tau0: f64,
    pub tau_e: f64,
    /// τ warms up over this fraction of all planned updates.
    pub warmup_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub sigma_init: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub lr_start: f64,
    pub lr_peak: f64,
    pub lr_end: f64,
    pub warmup_epochs: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// λ₁·ActCLIP + λ₂·FP.
    Fils,
    FpOnly,
    ActclipOnly,
    /// Masked-pixel MSE only.
    MseBaseline,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Fils => "fils",
            Objective::FpOnly => "fp-only",
            Objective::ActclipOnly => "actclip-only",
            Objective::MseBaseline => "mse-baseline",
        }
    }

    pub fn uses_actclip(self) -> bool {
        matches!(self, Objective::Fils | Objective::ActclipOnly)
    }

    pub fn uses_fp(self) -> bool {
        matches!(self, Objective::Fils | Objective::FpOnly)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub out_dir: PathBuf,
    pub epochs: usize,
    pub batch_size: usize,
    pub objective: Objective,
    /// Save a checkpoint every this many steps (the final step always saves).
    pub checkpoint_every: u64,
    /// Random resized crop area range; `1.0, 1.0` disables cropping.
    pub crop_scale_min: f64,
    pub crop_scale_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub label_smoothing: f64,
    pub weight_decay: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatmapConfig {
    /// Gaussian blur σ in patch units; 0 disables smoothing.
    pub smooth_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilsConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub patch: PatchSpec,
    pub mask: MaskConfig,
    pub action_area: ActionAreaParams,
    pub model: ModelConfig,
    pub ema: EmaConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub heatmap: HeatmapConfig,
}

impl FilsConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: FilsConfig = toml::from_str(s).map_err(|e| FilsError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FilsError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            FilsError::Config(m) => FilsError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn toy() -> Self {
        Self::from_toml_str(TOY_TOML).expect("bundled toy config is valid")
    }

    pub fn ci() -> Self {
        Self::from_toml_str(CI_TOML).expect("bundled ci config is valid")
    }

    pub fn large() -> Self {
        Self::from_toml_str(LARGE_TOML).expect("bundled large config is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FilsError::Config(m));
        self.data.validate()?;
        self.grid()?;
        self.action_area.validate()?;
        self.model.validate()?;
        self.loss_weights().validate()?;
        if !(self.mask.ratio > 0.0 && self.mask.ratio < 1.0) {
            return bad(format!("[mask] ratio must be in (0, 1), got {}", self.mask.ratio));
        }
        crate::tokenize::masked_tube_count(self.grid()?, self.mask.ratio)
            .map_err(|e| FilsError::Config(format!("[mask] {e}")))?;
        let e = &self.ema;
        if !(0.0 <= e.tau0 && e.tau0 <= e.tau_e && e.tau_e <= 1.0) {
            return bad("[ema] need 0 <= tau0 <= tau_e <= 1".into());
        }
        if !(e.warmup_fraction > 0.0 && e.warmup_fraction <= 1.0) {
            return bad("[ema] warmup_fraction must be in (0, 1]".into());
        }
        let l = &self.loss;
        if !(0.0 < l.sigma_min && l.sigma_min <= l.sigma_init && l.sigma_init <= l.sigma_max) {
            return bad("[loss] need 0 < sigma_min <= sigma_init <= sigma_max".into());
        }
        let o = &self.optim;
        if !(o.lr_start >= 0.0 && o.lr_peak >= 0.0 && o.lr_end >= 0.0) {
            return bad("[optim] learning rates must be >= 0".into());
        }
        if !(o.warmup_epochs >= 0.0) || !(o.weight_decay >= 0.0) || !(o.grad_clip >= 0.0) {
            return bad("[optim] warmup_epochs, weight_decay and grad_clip must be >= 0".into());
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return bad("[optim] betas must be in [0, 1) and eps > 0".into());
        }
        let t = &self.train;
        if t.epochs == 0 || t.batch_size == 0 {
            return bad("[train] epochs and batch_size must be >= 1".into());
        }
        if t.objective.uses_actclip() && t.batch_size < 2 {
            return bad("[train] the contrastive objective needs batch_size >= 2".into());
        }
        if t.batch_size > self.data.clip_count {
            return bad(format!(
                "[train] batch_size {} exceeds clip_count {}",
                t.batch_size, self.data.clip_count
            ));
        }
        if !(0.0 < t.crop_scale_min && t.crop_scale_min <= t.crop_scale_max && t.crop_scale_max <= 1.0) {
            return bad("[train] need 0 < crop_scale_min <= crop_scale_max <= 1".into());
        }
        let p = &self.probe;
        if p.epochs == 0 || p.batch_size == 0 || !(p.lr > 0.0) {
            return bad("[probe] epochs, batch_size and lr must be positive".into());
        }
        if !(0.0..1.0).contains(&p.label_smoothing) || !(p.weight_decay >= 0.0) {
            return bad("[probe] label_smoothing must be in [0, 1) and weight_decay >= 0".into());
        }
        if !(self.heatmap.smooth_sigma >= 0.0) {
            return bad("[heatmap] smooth_sigma must be >= 0".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridDims> {
        self.patch.grid_dims(self.data.geometry())
    }

    pub fn encoder_config(&self) -> Result<EncoderConfig> {
        Ok(EncoderConfig::from_model(
            &self.model,
            self.grid()?,
            self.patch.raw_dim(),
        ))
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.loss.lambda1,
            lambda2: self.loss.lambda2,
        }
    }

    pub fn sigma_clamp(&self) -> (f64, f64) {
        (self.loss.sigma_min, self.loss.sigma_max)
    }

    /// Full batches per epoch; a trailing partial batch is dropped.
    pub fn steps_per_epoch(&self) -> u64 {
        (self.data.clip_count / self.train.batch_size) as u64
    }

    pub fn total_steps(&self) -> u64 {
        self.steps_per_epoch() * self.train.epochs as u64
    }

    pub fn ema_schedule(&self) -> EmaSchedule {
        let n = (self.ema.warmup_fraction * self.total_steps() as f64).round() as u64;
        EmaSchedule {
            tau0: self.ema.tau0,
            tau_e: self.ema.tau_e,
            tau_n: n.max(1),
        }
    }

    pub fn lr_schedule(&self) -> crate::train::LrSchedule {
        let warmup = (self.optim.warmup_epochs * self.steps_per_epoch() as f64).round() as u64;
        crate::train::LrSchedule {
            lr_start: self.optim.lr_start,
            lr_peak: self.optim.lr_peak,
            lr_end: self.optim.lr_end,
            warmup_steps: warmup,
            total_steps: self.total_steps(),
        }
    }
}
