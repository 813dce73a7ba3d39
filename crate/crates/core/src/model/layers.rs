//! Transformer building blocks written against primitive tensor ops so that
//! every path is differentiable.

use candle_core::{Tensor, D};

use super::params::{Init, ParamSource, ParamSpec};
use crate::Result;

const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Linear {
    /// `[out, in]`
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn specs(prefix: &str, d_in: usize, d_out: usize, bias: bool) -> Vec<ParamSpec> {
        let mut v = vec![ParamSpec::new(
            format!("{prefix}.w"),
            &[d_out, d_in],
            Init::Normal(0.02),
            true,
        )];
        if bias {
            v.push(ParamSpec::new(format!("{prefix}.b"), &[d_out], Init::Zeros, false));
        }
        v
    }

    pub fn load(src: &dyn ParamSource, prefix: &str, bias: bool) -> Result<Self> {
        Ok(Linear {
            weight: src.tensor(&format!("{prefix}.w"))?,
            bias: if bias {
                Some(src.tensor(&format!("{prefix}.b"))?)
            } else {
                None
            },
        })
    }

    /// Applies to the last dimension of an input of any rank.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let d_in = *dims.last().expect("non-scalar input");
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let y = x.reshape((rows, d_in))?.matmul(&self.weight.t()?)?;
        let y = match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        };
        let mut out_dims = dims;
        *out_dims.last_mut().unwrap() = self.weight.dim(0)?;
        Ok(y.reshape(out_dims)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNorm {
    pub fn specs(prefix: &str, dim: usize) -> Vec<ParamSpec> {
        vec![
            ParamSpec::new(format!("{prefix}.g"), &[dim], Init::Ones, false),
            ParamSpec::new(format!("{prefix}.b"), &[dim], Init::Zeros, false),
        ]
    }

    pub fn load(src: &dyn ParamSource, prefix: &str) -> Result<Self> {
        Ok(LayerNorm {
            gamma: src.tensor(&format!("{prefix}.g"))?,
            beta: src.tensor(&format!("{prefix}.b"))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + LN_EPS)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

#[derive(Debug, Clone)]
pub struct Attention {
    qkv: Linear,
    proj: Linear,
    heads: usize,
}

impl Attention {
    pub fn specs(prefix: &str, dim: usize) -> Vec<ParamSpec> {
        let mut v = Linear::specs(&format!("{prefix}.qkv"), dim, 3 * dim, true);
        v.extend(Linear::specs(&format!("{prefix}.proj"), dim, dim, true));
        v
    }

    pub fn load(src: &dyn ParamSource, prefix: &str, heads: usize) -> Result<Self> {
        Ok(Attention {
            qkv: Linear::load(src, &format!("{prefix}.qkv"), true)?,
            proj: Linear::load(src, &format!("{prefix}.proj"), true)?,
            heads,
        })
    }

    /// `x`: `[B, N, D]`
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, n, d) = x.dims3()?;
        let hd = d / self.heads;
        let qkv = self
            .qkv
            .forward(x)?
            .reshape((b, n, 3, self.heads, hd))?
            .permute((2, 0, 3, 1, 4))?; // [3, B, H, N, hd]
        let q = qkv.get(0)?.contiguous()?;
        let k = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let scale = 1.0 / (hd as f64).sqrt();
        let att = (q.matmul(&k.t()?.contiguous()?)? * scale)?;
        let att = candle_nn::ops::softmax(&att, D::Minus1)?;
        let out = att.matmul(&v)?.transpose(1, 2)?.reshape((b, n, d))?;
        self.proj.forward(&out)
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    fc1: Linear,
    fc2: Linear,
}

impl Mlp {
    pub fn specs(prefix: &str, dim: usize, hidden: usize) -> Vec<ParamSpec> {
        let mut v = Linear::specs(&format!("{prefix}.fc1"), dim, hidden, true);
        v.extend(Linear::specs(&format!("{prefix}.fc2"), hidden, dim, true));
        v
    }

    pub fn load(src: &dyn ParamSource, prefix: &str) -> Result<Self> {
        Ok(Mlp {
            fc1: Linear::load(src, &format!("{prefix}.fc1"), true)?,
            fc2: Linear::load(src, &format!("{prefix}.fc2"), true)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&self.fc1.forward(x)?.gelu()?)
    }
}

/// Pre-norm transformer block.
#[derive(Debug, Clone)]
pub struct Block {
    norm1: LayerNorm,
    attn: Attention,
    norm2: LayerNorm,
    mlp: Mlp,
}

impl Block {
    pub fn specs(prefix: &str, dim: usize, mlp_ratio: f64) -> Vec<ParamSpec> {
        let hidden = ((dim as f64) * mlp_ratio).round() as usize;
        let mut v = LayerNorm::specs(&format!("{prefix}.norm1"), dim);
        v.extend(Attention::specs(&format!("{prefix}.attn"), dim));
        v.extend(LayerNorm::specs(&format!("{prefix}.norm2"), dim));
        v.extend(Mlp::specs(&format!("{prefix}.mlp"), dim, hidden));
        v
    }

    pub fn load(src: &dyn ParamSource, prefix: &str, heads: usize) -> Result<Self> {
        Ok(Block {
            norm1: LayerNorm::load(src, &format!("{prefix}.norm1"))?,
            attn: Attention::load(src, &format!("{prefix}.attn"), heads)?,
            norm2: LayerNorm::load(src, &format!("{prefix}.norm2"))?,
            mlp: Mlp::load(src, &format!("{prefix}.mlp"))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = (x + self.attn.forward(&self.norm1.forward(x)?)?)?;
        Ok((&x + self.mlp.forward(&self.norm2.forward(&x)?)?)?)
    }
}

pub fn blocks_specs(prefix: &str, depth: usize, dim: usize, mlp_ratio: f64) -> Vec<ParamSpec> {
    (0..depth)
        .flat_map(|i| Block::specs(&format!("{prefix}.blocks.{i}"), dim, mlp_ratio))
        .collect()
}

pub fn load_blocks(src: &dyn ParamSource, prefix: &str, depth: usize, heads: usize) -> Result<Vec<Block>> {
    (0..depth)
        .map(|i| Block::load(src, &format!("{prefix}.blocks.{i}"), heads))
        .collect()
}
