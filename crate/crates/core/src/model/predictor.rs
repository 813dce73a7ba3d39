use candle_core::Tensor;

use super::layers::{blocks_specs, load_blocks, Block, LayerNorm, Linear};
use super::params::{Init, ParamSource, ParamSpec};
use super::{CoordBatch, EncoderConfig, FactorizedPos};
use crate::error::FilsError;
use crate::Result;

/// Fills in features at masked positions from the visible-token features and
/// one learned MASK token per masked position.
#[derive(Debug, Clone)]
pub struct Predictor {
    embed: Linear,
    mask_token: Tensor,
    pos: FactorizedPos,
    blocks: Vec<Block>,
    norm: LayerNorm,
    out: Linear,
}

impl Predictor {
    pub fn specs(prefix: &str, enc: &EncoderConfig, depth: usize, out_dim: usize) -> Vec<ParamSpec> {
        let d = enc.embed_dim;
        let mut v = Linear::specs(&format!("{prefix}.embed"), d, d, true);
        v.push(ParamSpec::new(
            format!("{prefix}.mask_token"),
            &[d],
            Init::Normal(0.02),
            false,
        ));
        v.extend(FactorizedPos::specs(prefix, enc.grid, d));
        v.extend(blocks_specs(prefix, depth, d, enc.mlp_ratio));
        v.extend(LayerNorm::specs(&format!("{prefix}.norm"), d));
        v.extend(Linear::specs(&format!("{prefix}.out"), d, out_dim, true));
        v
    }

    pub fn load(src: &dyn ParamSource, prefix: &str, depth: usize, heads: usize) -> Result<Self> {
        Ok(Predictor {
            embed: Linear::load(src, &format!("{prefix}.embed"), true)?,
            mask_token: src.tensor(&format!("{prefix}.mask_token"))?,
            pos: FactorizedPos::load(src, prefix)?,
            blocks: load_blocks(src, prefix, depth, heads)?,
            norm: LayerNorm::load(src, &format!("{prefix}.norm"))?,
            out: Linear::load(src, &format!("{prefix}.out"), true)?,
        })
    }

    /// `visible_features`: `[B, N_u, D]`. Returns `[B, N_m, out_dim]`, rows in
    /// the order of `masked`.
    pub fn forward(&self, visible_features: &Tensor, visible: &CoordBatch, masked: &CoordBatch) -> Result<Tensor> {
        if masked.len == 0 {
            return Err(FilsError::InvalidArgument("no masked positions to predict".into()));
        }
        let (b, _, d) = visible_features.dims3()?;
        if masked.batch != b || visible.batch != b {
            return Err(FilsError::Shape("predictor batch mismatch".into()));
        }
        let ctx = (self.embed.forward(visible_features)? + self.pos.forward(visible)?)?;
        let queries = self
            .mask_token
            .reshape((1, 1, d))?
            .broadcast_as((b, masked.len, d))?
            .broadcast_add(&self.pos.forward(masked)?)?;
        let mut x = Tensor::cat(&[&ctx, &queries], 1)?;
        for blk in &self.blocks {
            x = blk.forward(&x)?;
        }
        let x = self.norm.forward(&x)?;
        let n_u = ctx.dim(1)?;
        self.out.forward(&x.narrow(1, n_u, masked.len)?)
    }
}
