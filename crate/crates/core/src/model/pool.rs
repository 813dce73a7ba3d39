use candle_core::Tensor;
use rand::Rng;

use super::PoolStrategy;
use crate::action_area::ActionArea;
use crate::error::FilsError;
use crate::tokenize::{GridDims, TokenCoord};
use crate::Result;

/// Flat indices of every token (all temporal slices) inside the area.
fn area_indices(dims: GridDims, area: &ActionArea) -> Result<Vec<usize>> {
    if area.is_empty() {
        return Err(FilsError::InvalidArgument("action area is empty".into()));
    }
    let mut idx = Vec::with_capacity(dims.t * area.len());
    for t in 0..dims.t {
        for &(y, x) in &area.patches {
            if y >= dims.y || x >= dims.x {
                return Err(FilsError::Shape(format!("area patch ({y}, {x}) outside grid {dims:?}")));
            }
            idx.push(dims.index(TokenCoord { t, y, x }));
        }
    }
    Ok(idx)
}

fn pooling_weights(
    dims: GridDims,
    area: &ActionArea,
    strategy: PoolStrategy,
    rng: &mut impl Rng,
) -> Result<Vec<(usize, f64)>> {
    let idx = area_indices(dims, area)?;
    Ok(match strategy {
        PoolStrategy::PatchAverage => {
            let w = 1.0 / idx.len() as f64;
            idx.into_iter().map(|i| (i, w)).collect()
        }
        PoolStrategy::Patch => vec![(idx[rng.random_range(0..idx.len())], 1.0)],
    })
}

/// `f̄` from full-view features `[N, D]`: the mean over area tokens, or one
/// uniformly drawn area token. Returns `[D]`.
pub fn pool_action_features(
    features: &Tensor,
    dims: GridDims,
    area: &ActionArea,
    strategy: PoolStrategy,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    let f = features.unsqueeze(0)?;
    let out = pool_action_features_batch(&f, dims, std::slice::from_ref(area), strategy, rng)?;
    Ok(out.squeeze(0)?)
}

/// Batched pooling of `[B, N, D]` into `[B, D]`, one area per sample. Written
/// as a single sparse-weight matmul so gradients reach exactly the pooled
/// tokens.
pub fn pool_action_features_batch(
    features: &Tensor,
    dims: GridDims,
    areas: &[ActionArea],
    strategy: PoolStrategy,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    let (b, n, d) = features.dims3()?;
    if n != dims.num_tokens() || areas.len() != b {
        return Err(FilsError::Shape(format!(
            "features [{b}, {n}, {d}] vs {} areas on a grid of {} tokens",
            areas.len(),
            dims.num_tokens()
        )));
    }
    let mut w = vec![0f64; b * b * n];
    for (s, area) in areas.iter().enumerate() {
        for (i, v) in pooling_weights(dims, area, strategy, rng)? {
            w[s * b * n + s * n + i] += v;
        }
    }
    let w = Tensor::from_vec(w, (b, b * n), features.device())?.to_dtype(features.dtype())?;
    Ok(w.matmul(&features.reshape((b * n, d))?)?)
}
