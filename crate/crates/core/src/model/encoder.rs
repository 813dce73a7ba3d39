use candle_core::Tensor;

use super::layers::{blocks_specs, load_blocks, Block, LayerNorm, Linear};
use super::params::{ParamSource, ParamSpec};
use super::{CoordBatch, EncoderConfig, FactorizedPos};
use crate::error::FilsError;
use crate::Result;

/// Fixed input standardization: pixels in [0, 1] are centred and scaled before
/// the patch embedding so the shared DC level does not swamp clip content.
pub const PIXEL_MEAN: f64 = 0.5;
pub const PIXEL_STD: f64 = 0.25;

/// ViT-style video encoder over tube tokens. Student and teacher share this
/// type and parameter layout; only the name prefix differs.
#[derive(Debug, Clone)]
pub struct VideoEncoder {
    patch_embed: Linear,
    pos: FactorizedPos,
    blocks: Vec<Block>,
    norm: LayerNorm,
    cfg: EncoderConfig,
}

impl VideoEncoder {
    pub fn specs(prefix: &str, cfg: &EncoderConfig) -> Vec<ParamSpec> {
        let mut v = Linear::specs(&format!("{prefix}.patch_embed"), cfg.token_raw_dim, cfg.embed_dim, true);
        v.extend(FactorizedPos::specs(prefix, cfg.grid, cfg.embed_dim));
        v.extend(blocks_specs(prefix, cfg.depth, cfg.embed_dim, cfg.mlp_ratio));
        v.extend(LayerNorm::specs(&format!("{prefix}.norm"), cfg.embed_dim));
        v
    }

    pub fn load(src: &dyn ParamSource, prefix: &str, cfg: &EncoderConfig) -> Result<Self> {
        Ok(VideoEncoder {
            patch_embed: Linear::load(src, &format!("{prefix}.patch_embed"), true)?,
            pos: FactorizedPos::load(src, prefix)?,
            blocks: load_blocks(src, prefix, cfg.depth, cfg.heads)?,
            norm: LayerNorm::load(src, &format!("{prefix}.norm"))?,
            cfg: *cfg,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// `tokens`: `[B, n, Draw]` with matching coordinates. Returns `[B, n, D]`.
    pub fn forward(&self, tokens: &Tensor, coords: &CoordBatch) -> Result<Tensor> {
        let (b, n, raw) = tokens.dims3()?;
        if n == 0 {
            return Err(FilsError::InvalidArgument("encoder needs at least one token".into()));
        }
        if n > self.cfg.max_tokens {
            return Err(FilsError::InvalidArgument(format!(
                "{n} tokens exceed the encoder limit of {}",
                self.cfg.max_tokens
            )));
        }
        if raw != self.cfg.token_raw_dim || coords.batch != b || coords.len != n {
            return Err(FilsError::Shape(format!(
                "tokens [{b}, {n}, {raw}] vs coords [{}, {}] and raw dim {}",
                coords.batch, coords.len, self.cfg.token_raw_dim
            )));
        }
        let pixels = tokens.affine(1.0 / PIXEL_STD, -PIXEL_MEAN / PIXEL_STD)?;
        let mut x = (self.patch_embed.forward(&pixels)? + self.pos.forward(coords)?)?;
        for blk in &self.blocks {
            x = blk.forward(&x)?;
        }
        self.norm.forward(&x)
    }
}
