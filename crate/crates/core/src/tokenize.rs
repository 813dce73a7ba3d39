//! Tube patchification and spatiotemporal tube masking.

use ndarray::{Array2, Array4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, FilsError};
use crate::synthgen::{ClipGeometry, VideoClip};
use crate::util::round_half_up;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchSpec {
    /// Patch side in pixels.
    pub spatial: usize,
    /// Frames per tube.
    pub temporal: usize,
}

impl PatchSpec {
    pub fn raw_dim(&self) -> usize {
        self.spatial * self.spatial * self.temporal * 3
    }

    /// Token grid for a clip geometry, rejecting non-divisible axes.
    pub fn grid_dims(&self, geom: ClipGeometry) -> Result<GridDims> {
        if self.spatial == 0 || self.temporal == 0 {
            return Err(invalid("patch sizes must be positive"));
        }
        let check = |axis: &str, len: usize, p: usize| {
            if len % p != 0 || len == 0 {
                Err(FilsError::Shape(format!(
                    "{axis} axis of length {len} is not divisible by patch size {p}"
                )))
            } else {
                Ok(len / p)
            }
        };
        Ok(GridDims {
            t: check("time", geom.frames, self.temporal)?,
            y: check("height", geom.height, self.spatial)?,
            x: check("width", geom.width, self.spatial)?,
        })
    }
}

/// Token grid shape (Tt, Hy, Wx).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDims {
    pub t: usize,
    pub y: usize,
    pub x: usize,
}

impl GridDims {
    pub fn new(t: usize, y: usize, x: usize) -> Self {
        GridDims { t, y, x }
    }

    pub fn num_tokens(&self) -> usize {
        self.t * self.y * self.x
    }

    pub fn num_spatial(&self) -> usize {
        self.y * self.x
    }

    /// Flat token index; tokens are ordered t-major, then y, then x.
    pub fn index(&self, c: TokenCoord) -> usize {
        (c.t * self.y + c.y) * self.x + c.x
    }

    pub fn coord(&self, index: usize) -> TokenCoord {
        let x = index % self.x;
        let y = (index / self.x) % self.y;
        let t = index / (self.x * self.y);
        TokenCoord { t, y, x }
    }

    pub fn coords(&self) -> Vec<TokenCoord> {
        (0..self.num_tokens()).map(|i| self.coord(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenCoord {
    pub t: usize,
    pub y: usize,
    pub x: usize,
}

/// A tube-patchified clip.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    /// `[N, spatial * spatial * temporal * 3]`, each row laid out (dt, py, px, c).
    pub tokens: Array2<f32>,
    pub coords: Vec<TokenCoord>,
    pub dims: GridDims,
    pub patch: PatchSpec,
}

pub fn tubeify(clip: &VideoClip, spec: PatchSpec) -> Result<TokenGrid> {
    tubeify_pixels(&clip.pixels, spec)
}

pub fn tubeify_pixels(pixels: &Array4<f32>, spec: PatchSpec) -> Result<TokenGrid> {
    let (frames, height, width, ch) = pixels.dim();
    if ch != 3 {
        return Err(FilsError::Shape(format!("expected 3 channels, got {ch}")));
    }
    let dims = spec.grid_dims(ClipGeometry { frames, height, width })?;
    let (p, q) = (spec.spatial, spec.temporal);
    let mut tokens = Array2::<f32>::zeros((dims.num_tokens(), spec.raw_dim()));
    for (n, mut row) in tokens.outer_iter_mut().enumerate() {
        let c = dims.coord(n);
        let mut k = 0;
        for dt in 0..q {
            for py in 0..p {
                for px in 0..p {
                    for ch in 0..3 {
                        row[k] = pixels[[c.t * q + dt, c.y * p + py, c.x * p + px, ch]];
                        k += 1;
                    }
                }
            }
        }
    }
    Ok(TokenGrid {
        tokens,
        coords: dims.coords(),
        dims,
        patch: spec,
    })
}

/// Inverse of [`tubeify`].
pub fn untubeify(grid: &TokenGrid) -> Array4<f32> {
    let (p, q) = (grid.patch.spatial, grid.patch.temporal);
    let d = grid.dims;
    let mut pixels = Array4::<f32>::zeros((d.t * q, d.y * p, d.x * p, 3));
    for (n, row) in grid.tokens.outer_iter().enumerate() {
        let c = d.coord(n);
        let mut k = 0;
        for dt in 0..q {
            for py in 0..p {
                for px in 0..p {
                    for ch in 0..3 {
                        pixels[[c.t * q + dt, c.y * p + py, c.x * p + px, ch]] = row[k];
                        k += 1;
                    }
                }
            }
        }
    }
    pixels
}

/// Which spatial tube positions are masked; shared by every temporal index.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    /// `[Hy, Wx]`
    pub masked_spatial: Array2<bool>,
    pub ratio_target: f64,
    pub dims: GridDims,
}

impl MaskSpec {
    pub fn is_masked(&self, c: TokenCoord) -> bool {
        self.masked_spatial[[c.y, c.x]]
    }

    pub fn masked_spatial_count(&self) -> usize {
        self.masked_spatial.iter().filter(|&&m| m).count()
    }

    /// N_m
    pub fn num_masked(&self) -> usize {
        self.masked_spatial_count() * self.dims.t
    }

    /// N_u
    pub fn num_visible(&self) -> usize {
        self.dims.num_tokens() - self.num_masked()
    }

    /// Token indices in grid order.
    pub fn masked_indices(&self) -> Vec<usize> {
        (0..self.dims.num_tokens())
            .filter(|&i| self.is_masked(self.dims.coord(i)))
            .collect()
    }

    pub fn visible_indices(&self) -> Vec<usize> {
        (0..self.dims.num_tokens())
            .filter(|&i| !self.is_masked(self.dims.coord(i)))
            .collect()
    }

    /// A mask that hides nothing. Only meaningful for tests and diagnostics.
    pub fn all_visible(dims: GridDims) -> Self {
        MaskSpec {
            masked_spatial: Array2::from_elem((dims.y, dims.x), false),
            ratio_target: 0.0,
            dims,
        }
    }
}

/// Number of masked spatial tubes for a ratio: nearest integer, ties up.
pub fn masked_tube_count(dims: GridDims, ratio: f64) -> Result<usize> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(invalid(format!("mask ratio must lie in (0, 1), got {ratio}")));
    }
    let total = dims.num_spatial();
    let count = round_half_up(ratio * total as f64);
    if count <= 0 || count as usize >= total {
        return Err(invalid(format!(
            "ratio {ratio} on {total} spatial positions leaves {} masked and {} visible tubes",
            count.max(0),
            total as i64 - count
        )));
    }
    Ok(count as usize)
}

/// Uniformly random tube mask with `round(ratio * Hy * Wx)` masked positions.
pub fn sample_tube_mask(dims: GridDims, ratio: f64, rng: &mut impl Rng) -> Result<MaskSpec> {
    let count = masked_tube_count(dims, ratio)?;
    let mut masked_spatial = Array2::from_elem((dims.y, dims.x), false);
    for i in rand::seq::index::sample(rng, dims.num_spatial(), count) {
        masked_spatial[[i / dims.x, i % dims.x]] = true;
    }
    Ok(MaskSpec {
        masked_spatial,
        ratio_target: ratio,
        dims,
    })
}

/// Visible tokens plus the coordinates of both parts, each in grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitTokens {
    /// `[N_u, Draw]`
    pub visible: Array2<f32>,
    pub visible_index: Vec<usize>,
    pub visible_coords: Vec<TokenCoord>,
    pub masked_index: Vec<usize>,
    pub masked_coords: Vec<TokenCoord>,
}

pub fn split_tokens(grid: &TokenGrid, mask: &MaskSpec) -> Result<SplitTokens> {
    if grid.dims != mask.dims {
        return Err(FilsError::Shape(format!(
            "mask dims {:?} do not match grid dims {:?}",
            mask.dims, grid.dims
        )));
    }
    let visible_index = mask.visible_indices();
    let masked_index = mask.masked_indices();
    let visible = grid.tokens.select(ndarray::Axis(0), &visible_index);
    Ok(SplitTokens {
        visible,
        visible_coords: visible_index.iter().map(|&i| grid.coords[i]).collect(),
        masked_coords: masked_index.iter().map(|&i| grid.coords[i]).collect(),
        visible_index,
        masked_index,
    })
}
