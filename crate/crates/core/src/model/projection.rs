use candle_core::{Tensor, D};

use super::layers::Linear;
use super::params::{ParamSource, ParamSpec};
use super::ProjectionKind;
use crate::Result;

pub const NORM_EPS: f64 = 1e-8;

/// Vision → language map θ(·). One instance serves both the contrastive and
/// the feature-prediction paths.
#[derive(Debug, Clone)]
pub enum ProjectionHead {
    Identity,
    Linear(Linear),
    Mlp { fc1: Linear, fc2: Linear },
}

impl ProjectionHead {
    pub fn specs(prefix: &str, kind: ProjectionKind, d_in: usize, d_out: usize) -> Vec<ParamSpec> {
        match kind {
            ProjectionKind::Identity => Vec::new(),
            ProjectionKind::Linear => Linear::specs(&format!("{prefix}.lin"), d_in, d_out, false),
            ProjectionKind::Mlp => {
                let mut v = Linear::specs(&format!("{prefix}.fc1"), d_in, d_in, true);
                v.extend(Linear::specs(&format!("{prefix}.fc2"), d_in, d_out, true));
                v
            }
        }
    }

    pub fn load(src: &dyn ParamSource, prefix: &str, kind: ProjectionKind) -> Result<Self> {
        Ok(match kind {
            ProjectionKind::Identity => ProjectionHead::Identity,
            ProjectionKind::Linear => ProjectionHead::Linear(Linear::load(src, &format!("{prefix}.lin"), false)?),
            ProjectionKind::Mlp => ProjectionHead::Mlp {
                fc1: Linear::load(src, &format!("{prefix}.fc1"), true)?,
                fc2: Linear::load(src, &format!("{prefix}.fc2"), true)?,
            },
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            ProjectionHead::Identity => Ok(x.clone()),
            ProjectionHead::Linear(l) => l.forward(x),
            ProjectionHead::Mlp { fc1, fc2 } => fc2.forward(&fc1.forward(x)?.gelu()?),
        }
    }
}

/// Row-wise `x / (‖x‖₂ + ε)` over the last axis. A zero row stays zero.
pub fn l2_normalize(x: &Tensor) -> Result<Tensor> {
    let norm = x.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?;
    if log::log_enabled!(log::Level::Warn) {
        let min = norm
            .flatten_all()?
            .min(0)?
            .to_dtype(candle_core::DType::F64)?
            .to_scalar::<f64>()?;
        if min < 1e-12 {
            log::warn!("normalizing a (near) zero vector; output left at zero");
        }
    }
    Ok(x.broadcast_div(&(norm + NORM_EPS)?)?)
}

/// `‖θ(x)‖`, or `‖x‖` when no head is given (the text side).
pub fn project_and_normalize(head: Option<&ProjectionHead>, x: &Tensor) -> Result<Tensor> {
    match head {
        Some(h) => l2_normalize(&h.forward(x)?),
        None => l2_normalize(x),
    }
}
