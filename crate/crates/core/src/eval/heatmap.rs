use std::path::Path;

use candle_core::D;
use image::{GrayImage, Luma};
use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::FilsModel;
use crate::error::FilsError;
use crate::model::{l2_normalize, project_and_normalize};
use crate::synthgen::VideoClip;
use crate::Result;

/// Text-to-patch similarity over the spatial grid, values in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    /// `[Hy, Wx]`.
    pub values: Array2<f32>,
    pub clip_id: String,
    pub text: String,
}

/// Separable Gaussian blur with σ in patch units. The kernel is truncated at
/// 3σ and renormalized at the borders, so a constant map stays constant and
/// values stay inside the input's range. σ ≤ 0 is the identity.
pub fn gaussian_smooth(x: &Array2<f32>, sigma: f64) -> Array2<f32> {
    if sigma <= 0.0 {
        return x.clone();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let pass = |src: &Array2<f32>, axis: usize| -> Array2<f32> {
        let (h, w) = src.dim();
        Array2::from_shape_fn((h, w), |(i, j)| {
            let (pos, len) = if axis == 0 { (i, h) } else { (j, w) };
            let (mut acc, mut norm) = (0.0f64, 0.0f64);
            for (ki, d) in (-r..=r).enumerate() {
                let p = pos as isize + d;
                if p < 0 || p >= len as isize {
                    continue;
                }
                let v = if axis == 0 {
                    src[[p as usize, j]]
                } else {
                    src[[i, p as usize]]
                };
                acc += k[ki] * v as f64;
                norm += k[ki];
            }
            (acc / norm) as f32
        })
    };
    pass(&pass(x, 0), 1)
}

/// Mean over temporal slices of a `[Tt, Hy, Wx]` similarity volume, min-max
/// normalized, then smoothed. A flat map normalizes to all zeros.
pub fn heatmap_from_similarity(sim: &Array3<f32>, sigma: f64) -> Array2<f32> {
    let mean = sim.mean_axis(Axis(0)).expect("at least one temporal slice");
    let lo = mean.fold(f32::INFINITY, |a, &b| a.min(b));
    let hi = mean.fold(f32::NEG_INFINITY, |a, &b| a.max(b));
    let span = hi - lo;
    let norm = if span > 0.0 && span.is_finite() {
        mean.mapv(|v| ((v - lo) / span).clamp(0.0, 1.0))
    } else {
        Array2::zeros(mean.raw_dim())
    };
    gaussian_smooth(&norm, sigma)
}

/// Cosine similarity between each projected patch feature of the full-view
/// student forward and the normalized text embedding.
pub fn similarity_heatmap(
    model: &FilsModel,
    clip: &VideoClip,
    clip_id: &str,
    text: &str,
    smooth_sigma: f64,
) -> Result<Heatmap> {
    let f = model.patch_features(&[clip])?.squeeze(0)?;
    let v = project_and_normalize(Some(&model.projection()?), &f)?;
    let z = l2_normalize(&model.text_encoder()?.encode(text)?.unsqueeze(0)?)?;
    let sim = v.broadcast_mul(&z)?.sum(D::Minus1)?.to_vec1::<f32>()?;
    let g = model.grid;
    let vol = Array3::from_shape_vec((g.t, g.y, g.x), sim).map_err(|e| FilsError::Shape(e.to_string()))?;
    Ok(Heatmap {
        values: heatmap_from_similarity(&vol, smooth_sigma),
        clip_id: clip_id.to_string(),
        text: text.to_string(),
    })
}

fn save_gray(values: &Array2<f32>, path: &Path, scale: u32) -> Result<()> {
    let (h, w) = values.dim();
    let s = scale.max(1);
    let img = GrayImage::from_fn(w as u32 * s, h as u32 * s, |x, y| {
        let v = values[[(y / s) as usize, (x / s) as usize]];
        Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| FilsError::io(dir, e))?;
    }
    img.save(path)?;
    Ok(())
}

/// Grayscale PNG, each patch drawn as a `scale`×`scale` block.
pub fn save_heatmap_png(h: &Heatmap, path: &Path, scale: u32) -> Result<()> {
    save_gray(&h.values, path, scale)
}

/// Binary patch mask as a black/white PNG.
pub fn save_mask_png(mask: &Array2<bool>, path: &Path, scale: u32) -> Result<()> {
    save_gray(&mask.mapv(|b| b as u8 as f32), path, scale)
}
