//! Student/teacher video encoders, masked-feature predictor, frozen toy text
//! encoder and the shared vision-to-language projection head.

mod encoder;
mod layers;
pub mod params;
mod pool;
mod predictor;
mod projection;
mod text;

pub use encoder::VideoEncoder;
pub use layers::{Block, LayerNorm, Linear};
pub use pool::{pool_action_features, pool_action_features_batch};
pub use predictor::Predictor;
pub use projection::{l2_normalize, project_and_normalize, ProjectionHead, NORM_EPS};
pub use text::{TextEncoder, Vocab};

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::FilsError;
use crate::tokenize::{GridDims, TokenCoord};
use crate::Result;
use params::{Init, ParamSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionKind {
    /// Linear → GELU → Linear.
    Mlp,
    /// Single linear map without bias.
    Linear,
    /// No parameters; requires `embed_dim == text_dim`.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TeacherInput {
    /// Teacher encodes every token; targets are gathered at masked positions.
    Full,
    /// Teacher encodes only the masked tokens.
    MaskedOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolStrategy {
    PatchAverage,
    Patch,
}

/// `[model]` section of the run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub predictor_depth: usize,
    pub text_dim: usize,
    pub text_depth: usize,
    pub text_heads: usize,
    pub text_max_len: usize,
    pub projection: ProjectionKind,
    pub teacher_input: TeacherInput,
    pub pool_strategy: PoolStrategy,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FilsError::Config(format!("[model] {m}")));
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return bad(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            ));
        }
        if self.text_dim == 0 || self.text_heads == 0 || self.text_dim % self.text_heads != 0 {
            return bad(format!(
                "text_dim {} must be a positive multiple of text_heads {}",
                self.text_dim, self.text_heads
            ));
        }
        if self.depth == 0 || self.predictor_depth == 0 || self.text_depth == 0 {
            return bad("depths must be >= 1".into());
        }
        if !(self.mlp_ratio > 0.0) {
            return bad("mlp_ratio must be > 0".into());
        }
        if self.projection == ProjectionKind::Identity && self.embed_dim != self.text_dim {
            return bad("identity projection needs embed_dim == text_dim".into());
        }
        if self.text_max_len == 0 {
            return bad("text_max_len must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub token_raw_dim: usize,
    pub max_tokens: usize,
    pub grid: GridDims,
}

impl EncoderConfig {
    pub fn from_model(m: &ModelConfig, grid: GridDims, token_raw_dim: usize) -> Self {
        EncoderConfig {
            embed_dim: m.embed_dim,
            depth: m.depth,
            heads: m.heads,
            mlp_ratio: m.mlp_ratio,
            token_raw_dim,
            max_tokens: grid.num_tokens(),
            grid,
        }
    }
}

/// Per-token grid coordinates of a batch, as index tensors.
#[derive(Debug, Clone)]
pub struct CoordBatch {
    pub t: Tensor,
    pub y: Tensor,
    pub x: Tensor,
    pub batch: usize,
    pub len: usize,
}

impl CoordBatch {
    pub fn new(coords: &[Vec<TokenCoord>], grid: GridDims, device: &Device) -> Result<Self> {
        let batch = coords.len();
        let len = coords.first().map_or(0, |c| c.len());
        if coords.iter().any(|c| c.len() != len) {
            return Err(FilsError::Shape("ragged coordinate batch".into()));
        }
        let mut t = Vec::with_capacity(batch * len);
        let mut y = Vec::with_capacity(batch * len);
        let mut x = Vec::with_capacity(batch * len);
        for c in coords.iter().flatten() {
            if c.t >= grid.t || c.y >= grid.y || c.x >= grid.x {
                return Err(FilsError::Shape(format!("coordinate {c:?} outside grid {grid:?}")));
            }
            t.push(c.t as u32);
            y.push(c.y as u32);
            x.push(c.x as u32);
        }
        Ok(CoordBatch {
            t: Tensor::from_vec(t, batch * len, device)?,
            y: Tensor::from_vec(y, batch * len, device)?,
            x: Tensor::from_vec(x, batch * len, device)?,
            batch,
            len,
        })
    }
}

/// Learned positional encodings factorized over (t, y, x).
#[derive(Debug, Clone)]
pub struct FactorizedPos {
    pub t: Tensor,
    pub y: Tensor,
    pub x: Tensor,
}

impl FactorizedPos {
    pub fn specs(prefix: &str, grid: GridDims, dim: usize) -> Vec<ParamSpec> {
        vec![
            ParamSpec::new(format!("{prefix}.pos_t"), &[grid.t, dim], Init::Normal(0.02), false),
            ParamSpec::new(format!("{prefix}.pos_y"), &[grid.y, dim], Init::Normal(0.02), false),
            ParamSpec::new(format!("{prefix}.pos_x"), &[grid.x, dim], Init::Normal(0.02), false),
        ]
    }

    pub fn load(src: &dyn params::ParamSource, prefix: &str) -> Result<Self> {
        Ok(FactorizedPos {
            t: src.tensor(&format!("{prefix}.pos_t"))?,
            y: src.tensor(&format!("{prefix}.pos_y"))?,
            x: src.tensor(&format!("{prefix}.pos_x"))?,
        })
    }

    /// `[B, N, D]` encodings for the given coordinates.
    pub fn forward(&self, c: &CoordBatch) -> Result<Tensor> {
        let d = self.t.dim(1)?;
        let p = (self.t.index_select(&c.t, 0)? + self.y.index_select(&c.y, 0)?)?;
        let p = (p + self.x.index_select(&c.x, 0)?)?;
        Ok(p.reshape((c.batch, c.len, d))?)
    }
}

/// Parameter tables of a complete model, keyed by role.
pub struct ModelLayout {
    pub encoder: EncoderConfig,
    pub model: ModelConfig,
    /// Predictor output width: `embed_dim` for feature prediction, the raw
    /// token width for pixel reconstruction.
    pub predictor_out: usize,
    pub vocab: Vocab,
}

pub const STUDENT: &str = "student";
pub const TEACHER: &str = "teacher";
pub const PREDICTOR: &str = "predictor";
pub const PROJECTION: &str = "projection";
pub const TEXT: &str = "text";
pub const LOG_SIGMA: &str = "log_sigma";

impl ModelLayout {
    pub fn student_specs(&self) -> Vec<ParamSpec> {
        VideoEncoder::specs(STUDENT, &self.encoder)
    }

    pub fn teacher_specs(&self) -> Vec<ParamSpec> {
        VideoEncoder::specs(TEACHER, &self.encoder)
    }

    pub fn predictor_specs(&self) -> Vec<ParamSpec> {
        Predictor::specs(PREDICTOR, &self.encoder, self.model.predictor_depth, self.predictor_out)
    }

    pub fn projection_specs(&self) -> Vec<ParamSpec> {
        ProjectionHead::specs(
            PROJECTION,
            self.model.projection,
            self.model.embed_dim,
            self.model.text_dim,
        )
    }

    pub fn text_specs(&self) -> Vec<ParamSpec> {
        TextEncoder::specs(TEXT, &self.model, self.vocab.len())
    }

    pub fn log_sigma_spec(sigma_init: f64) -> ParamSpec {
        ParamSpec::new(LOG_SIGMA, &[], Init::Const(sigma_init.ln()), false)
    }

    /// Everything the optimizer owns.
    pub fn trainable_specs(&self, sigma_init: f64) -> Vec<ParamSpec> {
        let mut v = self.student_specs();
        v.extend(self.predictor_specs());
        v.extend(self.projection_specs());
        v.push(Self::log_sigma_spec(sigma_init));
        v
    }
}
