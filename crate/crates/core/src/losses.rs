//! Video-text contrastive loss over action-area features, latent feature
//! prediction loss, the pixel MSE baseline and their weighted sum.

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::FilsError;
use crate::Result;

/// Row norms must be within this of 1.
pub const UNIT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) || self.lambda1 + self.lambda2 == 0.0 {
            return Err(FilsError::Config(format!(
                "[loss] lambdas must be >= 0 and not both zero, got ({}, {})",
                self.lambda1, self.lambda2
            )));
        }
        Ok(())
    }
}

fn row_norms(x: &Tensor) -> Result<Vec<f64>> {
    Ok(x.to_dtype(DType::F64)?
        .sqr()?
        .sum(D::Minus1)?
        .sqrt()?
        .to_vec1::<f64>()?)
}

/// Rows must be unit vectors. An exactly zero row is the normalizer's
/// documented output for a zero input and is let through.
fn check_unit_rows(x: &Tensor, what: &str) -> Result<()> {
    for (i, n) in row_norms(x)?.into_iter().enumerate() {
        if n != 0.0 && (n - 1.0).abs() > UNIT_TOL {
            return Err(FilsError::InvalidArgument(format!(
                "{what} row {i} has norm {n}, expected 1"
            )));
        }
    }
    Ok(())
}

/// σ from log σ, clamped to `[lo, hi]`.
pub fn sigma_of(log_sigma: &Tensor, clamp: (f64, f64)) -> Result<Tensor> {
    Ok(log_sigma.clamp(clamp.0.ln(), clamp.1.ln())?.exp()?)
}

/// Cross-entropy of each row's diagonal entry, max-shifted.
fn diag_cross_entropy(logits: &Tensor) -> Result<Tensor> {
    let b = logits.dim(0)?;
    let shifted = logits.broadcast_sub(&logits.max_keepdim(1)?.detach())?;
    let lse = shifted.exp()?.sum(1)?.log()?;
    let eye = Tensor::eye(b, logits.dtype(), logits.device())?;
    let diag = (shifted * eye)?.sum(1)?;
    Ok((lse - diag)?.mean(0)?)
}

/// Unchecked symmetric InfoNCE; callers validate.
pub(crate) fn actclip_core(zv: &Tensor, zt: &Tensor, log_sigma: &Tensor, clamp: (f64, f64)) -> Result<Tensor> {
    let sigma = sigma_of(log_sigma, clamp)?;
    let logits = zv.matmul(&zt.t()?)?.broadcast_div(&sigma)?;
    let v2t = diag_cross_entropy(&logits)?;
    let t2v = diag_cross_entropy(&logits.t()?)?;
    Ok(((v2t + t2v)? * 0.5)?)
}

/// ½(L_V2T + L_T2V): video i against every caption j, and caption i against
/// every video j. `log_sigma` is a scalar.
pub fn actclip_loss(zv: &Tensor, zt: &Tensor, log_sigma: &Tensor, clamp: (f64, f64)) -> Result<Tensor> {
    let (b, d) = zv.dims2()?;
    if b == 0 {
        return Err(FilsError::InvalidArgument("contrastive batch is empty".into()));
    }
    if zt.dims2()? != (b, d) {
        return Err(FilsError::Shape(format!("zV {:?} vs zT {:?}", zv.dims(), zt.dims())));
    }
    if log_sigma.rank() != 0 {
        return Err(FilsError::Shape("log_sigma must be a scalar".into()));
    }
    check_unit_rows(zv, "zV")?;
    check_unit_rows(zt, "zT")?;
    actclip_core(zv, zt, log_sigma, clamp)
}

/// Mean over rows of ‖p̃ᵢ − g̃ᵢ‖₁. The target side is detached.
pub fn fp_loss(p: &Tensor, g: &Tensor) -> Result<Tensor> {
    if p.dims() != g.dims() || p.rank() != 2 {
        return Err(FilsError::Shape(format!("p {:?} vs g {:?}", p.dims(), g.dims())));
    }
    if p.dim(0)? == 0 {
        return Err(FilsError::InvalidArgument("no masked rows".into()));
    }
    check_unit_rows(p, "predicted")?;
    check_unit_rows(g, "target")?;
    fp_core(p, g)
}

pub(crate) fn fp_core(p: &Tensor, g: &Tensor) -> Result<Tensor> {
    Ok((p - g.detach())?.abs()?.sum(1)?.mean(0)?)
}

/// Mean squared error over every element.
pub fn mse_pixel_loss(reconstructed: &Tensor, target: &Tensor) -> Result<Tensor> {
    if reconstructed.dims() != target.dims() {
        return Err(FilsError::Shape(format!(
            "reconstruction {:?} vs target {:?}",
            reconstructed.dims(),
            target.dims()
        )));
    }
    Ok((reconstructed - target.detach())?.sqr()?.mean_all()?)
}

fn scalar_f64(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// λ₁·L_act + λ₂·L_fp. Absent terms contribute nothing; a non-finite term is
/// an error.
pub fn total_loss(l_act: Option<&Tensor>, l_fp: Option<&Tensor>, w: &LossWeights) -> Result<Tensor> {
    let mut parts = Vec::new();
    for (name, term, lambda) in [("actclip", l_act, w.lambda1), ("fp", l_fp, w.lambda2)] {
        if let Some(t) = term {
            let v = scalar_f64(t)?;
            if !v.is_finite() {
                return Err(FilsError::NonFinite(format!("{name} loss is {v}")));
            }
            parts.push(t.affine(lambda, 0.0)?);
        }
    }
    let mut it = parts.into_iter();
    let first = it
        .next()
        .ok_or_else(|| FilsError::InvalidArgument("no loss terms".into()))?;
    it.try_fold(first, |acc, t| Ok((acc + t)?))
}
