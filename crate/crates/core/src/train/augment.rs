use ndarray::{Array2, Array4};
use rand::Rng;

use crate::action_area::ActionArea;
use crate::Result;

/// Crop a square window covering a random fraction of the frame area in
/// `scale`, resize it back to the full frame (bilinear), and carry the action
/// area along: an output patch is selected when its centre maps into a
/// selected source patch. An area that leaves the crop becomes all patches.
/// No flips: mirroring would swap the left/right classes.
pub fn random_resized_crop(
    pixels: &Array4<f32>,
    area: &ActionArea,
    patch_side: usize,
    scale: (f64, f64),
    rng: &mut impl Rng,
) -> Result<(Array4<f32>, ActionArea)> {
    let (frames, h, w, ch) = pixels.dim();
    if scale.0 >= 1.0 {
        return Ok((pixels.clone(), area.clone()));
    }
    let s = rng.random_range(scale.0..=scale.1);
    let ch_h = ((h as f64) * s.sqrt()).max(1.0);
    let ch_w = ((w as f64) * s.sqrt()).max(1.0);
    let y0 = rng.random_range(0.0..=(h as f64 - ch_h));
    let x0 = rng.random_range(0.0..=(w as f64 - ch_w));
    let sy = ch_h / h as f64;
    let sx = ch_w / w as f64;
    let src = |oy: f64, ox: f64| (y0 + (oy + 0.5) * sy - 0.5, x0 + (ox + 0.5) * sx - 0.5);

    let mut out = Array4::<f32>::zeros((frames, h, w, ch));
    for y in 0..h {
        for x in 0..w {
            let (fy, fx) = src(y as f64, x as f64);
            let fy = fy.clamp(0.0, (h - 1) as f64);
            let fx = fx.clamp(0.0, (w - 1) as f64);
            let (y1, x1) = (fy.floor() as usize, fx.floor() as usize);
            let (y2, x2) = ((y1 + 1).min(h - 1), (x1 + 1).min(w - 1));
            let (wy, wx) = ((fy - y1 as f64) as f32, (fx - x1 as f64) as f32);
            for t in 0..frames {
                for c in 0..ch {
                    let a = pixels[[t, y1, x1, c]] * (1.0 - wx) + pixels[[t, y1, x2, c]] * wx;
                    let b = pixels[[t, y2, x1, c]] * (1.0 - wx) + pixels[[t, y2, x2, c]] * wx;
                    out[[t, y, x, c]] = a * (1.0 - wy) + b * wy;
                }
            }
        }
    }

    let (hy, wxg) = area.scores.dim();
    let p = patch_side as f64;
    let mut patches = Vec::new();
    let mut scores = Array2::<f32>::zeros((hy, wxg));
    for gy in 0..hy {
        for gx in 0..wxg {
            let (fy, fx) = src((gy as f64 + 0.5) * p - 0.5, (gx as f64 + 0.5) * p - 0.5);
            let py = ((fy + 0.5) / p).floor().clamp(0.0, (hy - 1) as f64) as usize;
            let px = ((fx + 0.5) / p).floor().clamp(0.0, (wxg - 1) as f64) as usize;
            scores[[gy, gx]] = area.scores[[py, px]];
            if area.contains(py, px) {
                patches.push((gy, gx));
            }
        }
    }
    let mapped = if patches.is_empty() {
        ActionArea {
            scores,
            ..ActionArea::all(hy, wxg)
        }
    } else {
        ActionArea {
            patches,
            scores,
            fallback: area.fallback,
        }
    };
    Ok((out, mapped))
}
