//! Patch-level motion region detection: block-matching flow, median camera
//! compensation and a relative threshold on per-patch flow magnitude.

use ndarray::{Array2, Array4, ArrayView4};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, FilsError};
use crate::synthgen::VideoClip;
use crate::tokenize::{GridDims, PatchSpec};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionAreaParams {
    /// Block side for matching, pixels.
    pub block: usize,
    /// Search radius r; candidates lie in [-r, r]².
    pub radius: usize,
    /// Relative threshold in [0, 1).
    pub theta_motion: f64,
}

impl Default for ActionAreaParams {
    fn default() -> Self {
        ActionAreaParams {
            block: 8,
            radius: 4,
            theta_motion: 0.5,
        }
    }
}

impl ActionAreaParams {
    pub fn validate(&self) -> Result<()> {
        if self.block == 0 {
            return Err(FilsError::Config("[action_area] block must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.theta_motion) {
            return Err(FilsError::Config(format!(
                "[action_area] theta_motion must be in [0, 1), got {}",
                self.theta_motion
            )));
        }
        Ok(())
    }
}

/// Dense displacement field. Block matching makes it piecewise constant.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    /// `[T-1, H, W, 2]`, (dx, dy) in pixels per frame: frame t at p matches
    /// frame t+1 at p + d.
    pub flow: Array4<f32>,
    pub block: usize,
}

impl FlowField {
    fn blocks_y(&self) -> usize {
        self.flow.dim().1.div_ceil(self.block)
    }

    fn blocks_x(&self) -> usize {
        self.flow.dim().2.div_ceil(self.block)
    }

    /// Displacement of block (by, bx) between frames t and t+1.
    pub fn block_flow(&self, t: usize, by: usize, bx: usize) -> (f32, f32) {
        let (y, x) = (by * self.block, bx * self.block);
        (self.flow[[t, y, x, 0]], self.flow[[t, y, x, 1]])
    }

    fn fill_block(&mut self, t: usize, by: usize, bx: usize, d: (f32, f32)) {
        let (_, h, w, _) = self.flow.dim();
        for y in by * self.block..((by + 1) * self.block).min(h) {
            for x in bx * self.block..((bx + 1) * self.block).min(w) {
                self.flow[[t, y, x, 0]] = d.0;
                self.flow[[t, y, x, 1]] = d.1;
            }
        }
    }

    pub fn max_magnitude(&self) -> f32 {
        let (n, h, w, _) = self.flow.dim();
        let mut m = 0.0f32;
        for t in 0..n {
            for y in 0..h {
                for x in 0..w {
                    m = m.max(self.flow[[t, y, x, 0]].hypot(self.flow[[t, y, x, 1]]));
                }
            }
        }
        m
    }
}

/// Candidate displacements ordered by L1 length so that ties resolve toward
/// the smallest motion.
fn candidates(radius: usize) -> Vec<(i64, i64)> {
    let r = radius as i64;
    let mut c: Vec<(i64, i64)> = (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dx, dy))).collect();
    c.sort_by_key(|&(dx, dy)| (dx.abs() + dy.abs(), dy, dx));
    c
}

/// Mean absolute RGB difference between a frame-t block and frame t+1 shifted
/// by (dx, dy), over the pixels whose shifted position lies inside the frame.
/// `None` when less than half the block overlaps.
fn mean_abs_diff(
    px: &ArrayView4<f32>,
    t: usize,
    (y0, y1, x0, x1): (usize, usize, usize, usize),
    (dx, dy): (i64, i64),
) -> Option<f32> {
    let (_, h, w, _) = px.dim();
    let ys = (y0 as i64).max(-dy)..(y1 as i64).min(h as i64 - dy);
    let xs = (x0 as i64).max(-dx)..(x1 as i64).min(w as i64 - dx);
    let n = ys.clone().count() * xs.clone().count();
    if 2 * n < (y1 - y0) * (x1 - x0) {
        return None;
    }
    let mut s = 0.0f32;
    for y in ys {
        let (y, yd) = (y as usize, (y + dy) as usize);
        for x in xs.clone() {
            let (x, xd) = (x as usize, (x + dx) as usize);
            for c in 0..3 {
                s += (px[[t, y, x, c]] - px[[t + 1, yd, xd, c]]).abs();
            }
        }
    }
    Some(s / (3 * n) as f32)
}

/// A block leaves the frame's dominant displacement only when another
/// candidate lowers its mean absolute difference by this much. Sensor noise
/// moves block costs by far less, so flat regions follow the camera.
const MATCH_MARGIN: f32 = 0.004;

/// Lowest-cost displacement of one block. `prior` is kept unless a candidate
/// beats it by `margin`.
fn match_block(
    px: &ArrayView4<f32>,
    t: usize,
    rect: (usize, usize, usize, usize),
    cands: &[(i64, i64)],
    prior: (i64, i64),
    margin: f32,
) -> (i64, i64) {
    let base = mean_abs_diff(px, t, rect, prior).map_or(f32::INFINITY, |s| s - margin);
    let mut best = (base, prior);
    for &d in cands {
        if let Some(s) = mean_abs_diff(px, t, rect, d) {
            if s < best.0 {
                best = (s, d);
            }
        }
    }
    best.1
}

/// Block-matching flow by exhaustive search over RGB. Near the frame border
/// a candidate is scored on the part of the block that stays inside, so
/// content leaving the frame under a camera pan still matches. A first pass
/// finds each frame pair's median displacement; the second pass keeps
/// ambiguous blocks at that displacement.
pub fn estimate_flow(clip: &VideoClip, params: &ActionAreaParams) -> Result<FlowField> {
    params.validate()?;
    let px = clip.pixels.view();
    let (frames, h, w, _) = px.dim();
    if frames < 2 {
        return Err(invalid("flow needs at least two frames"));
    }
    let b = params.block;
    let cands = candidates(params.radius);
    let mut field = FlowField {
        flow: Array4::zeros((frames - 1, h, w, 2)),
        block: b,
    };
    let (nby, nbx) = (field.blocks_y(), field.blocks_x());
    let rect = |by: usize, bx: usize| (by * b, ((by + 1) * b).min(h), bx * b, ((bx + 1) * b).min(w));
    for t in 0..frames - 1 {
        let mut first = Vec::with_capacity(nby * nbx);
        for by in 0..nby {
            for bx in 0..nbx {
                first.push(match_block(&px, t, rect(by, bx), &cands, (0, 0), 0.0));
            }
        }
        let mut dxs: Vec<f32> = first.iter().map(|d| d.0 as f32).collect();
        let mut dys: Vec<f32> = first.iter().map(|d| d.1 as f32).collect();
        let prior = (median(&mut dxs).round() as i64, median(&mut dys).round() as i64);
        for by in 0..nby {
            for bx in 0..nbx {
                let d = match_block(&px, t, rect(by, bx), &cands, prior, MATCH_MARGIN);
                field.fill_block(t, by, bx, (d.0 as f32, d.1 as f32));
            }
        }
    }
    Ok(field)
}

fn median(v: &mut [f32]) -> f32 {
    v.sort_by(f32::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Subtract, per frame pair, the coordinate-wise median block displacement.
pub fn compensate_camera(field: &FlowField) -> FlowField {
    let mut out = field.clone();
    let (nby, nbx) = (field.blocks_y(), field.blocks_x());
    for t in 0..field.flow.dim().0 {
        let mut dxs = Vec::with_capacity(nby * nbx);
        let mut dys = Vec::with_capacity(nby * nbx);
        for by in 0..nby {
            for bx in 0..nbx {
                let (dx, dy) = field.block_flow(t, by, bx);
                dxs.push(dx);
                dys.push(dy);
            }
        }
        let g = (median(&mut dxs), median(&mut dys));
        for by in 0..nby {
            for bx in 0..nbx {
                let (dx, dy) = field.block_flow(t, by, bx);
                out.fill_block(t, by, bx, (dx - g.0, dy - g.1));
            }
        }
    }
    out
}

/// Selected spatial patches with their motion scores. Never empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionArea {
    /// (y, x) grid positions in row-major order.
    pub patches: Vec<(usize, usize)>,
    /// `[Hy, Wx]` mean flow magnitude per patch.
    pub scores: Array2<f32>,
    /// True when no patch moved and every patch was selected.
    pub fallback: bool,
}

impl ActionArea {
    pub fn all(hy: usize, wx: usize) -> Self {
        ActionArea {
            patches: (0..hy).flat_map(|y| (0..wx).map(move |x| (y, x))).collect(),
            scores: Array2::zeros((hy, wx)),
            fallback: true,
        }
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        self.patches.binary_search(&(y, x)).is_ok()
    }

    pub fn mask(&self) -> Array2<bool> {
        let mut m = Array2::from_elem(self.scores.dim(), false);
        for &(y, x) in &self.patches {
            m[[y, x]] = true;
        }
        m
    }
}

/// Jaccard similarity of two patch sets.
pub fn jaccard(a: &[(usize, usize)], b: &[(usize, usize)]) -> f64 {
    let sa: std::collections::BTreeSet<_> = a.iter().collect();
    let sb: std::collections::BTreeSet<_> = b.iter().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

/// Score each spatial patch by its mean flow magnitude over all frame pairs
/// and keep those above `theta · max`. Falls back to every patch when nothing
/// moves.
pub fn detect_action_area(
    field: &FlowField,
    dims: GridDims,
    patch: PatchSpec,
    theta_motion: f64,
) -> Result<ActionArea> {
    let (n, h, w, _) = field.flow.dim();
    if dims.y * patch.spatial != h || dims.x * patch.spatial != w {
        return Err(FilsError::Shape(format!(
            "flow {h}x{w} does not tile a {}x{} grid of {}-px patches",
            dims.y, dims.x, patch.spatial
        )));
    }
    if !(0.0..1.0).contains(&theta_motion) {
        return Err(invalid(format!("theta_motion must be in [0, 1), got {theta_motion}")));
    }
    let p = patch.spatial;
    let mut scores = Array2::<f32>::zeros((dims.y, dims.x));
    for gy in 0..dims.y {
        for gx in 0..dims.x {
            let mut s = 0.0f64;
            for t in 0..n {
                for y in gy * p..(gy + 1) * p {
                    for x in gx * p..(gx + 1) * p {
                        s += field.flow[[t, y, x, 0]].hypot(field.flow[[t, y, x, 1]]) as f64;
                    }
                }
            }
            scores[[gy, gx]] = (s / (n * p * p).max(1) as f64) as f32;
        }
    }
    let max = scores.iter().cloned().fold(0.0f32, f32::max);
    if !(max > 0.0) {
        return Ok(ActionArea {
            scores,
            ..ActionArea::all(dims.y, dims.x)
        });
    }
    let cut = theta_motion as f32 * max;
    let patches: Vec<(usize, usize)> = scores
        .indexed_iter()
        .filter(|(_, &s)| s > cut)
        .map(|(ix, _)| ix)
        .collect();
    Ok(ActionArea {
        patches,
        scores,
        fallback: false,
    })
}

/// The full detector pipeline for one clip.
pub fn action_area_for_clip(clip: &VideoClip, patch: PatchSpec, params: &ActionAreaParams) -> Result<ActionArea> {
    let dims = patch.grid_dims(clip.geometry())?;
    let flow = compensate_camera(&estimate_flow(clip, params)?);
    detect_action_area(&flow, dims, patch, params.theta_motion)
}

/// Ground-truth patch set from the motion mask: patches whose time-averaged
/// object coverage is at least half the largest such coverage.
pub fn object_patches(clip: &VideoClip, patch: PatchSpec) -> Result<Vec<(usize, usize)>> {
    let dims = patch.grid_dims(clip.geometry())?;
    let (frames, _, _) = clip.motion_mask.dim();
    let p = patch.spatial;
    let mut cover = Array2::<f64>::zeros((dims.y, dims.x));
    for gy in 0..dims.y {
        for gx in 0..dims.x {
            let mut c = 0usize;
            for t in 0..frames {
                for y in gy * p..(gy + 1) * p {
                    for x in gx * p..(gx + 1) * p {
                        c += clip.motion_mask[[t, y, x]] as usize;
                    }
                }
            }
            cover[[gy, gx]] = c as f64 / (frames * p * p) as f64;
        }
    }
    let max = cover.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(Vec::new());
    }
    Ok(cover
        .indexed_iter()
        .filter(|(_, &c)| c >= 0.5 * max)
        .map(|(ix, _)| ix)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{render_clip, ClipGeometry, Color, Motion, SceneSpec, ShapeKind};
    use ndarray::Array3;
    use proptest::prelude::*;

    const TOY: PatchSpec = PatchSpec {
        spatial: 8,
        temporal: 2,
    };

    fn geom() -> ClipGeometry {
        ClipGeometry {
            frames: 8,
            height: 64,
            width: 64,
        }
    }

    fn scene(motion: Motion, pan: (f32, f32), span: u32) -> SceneSpec {
        SceneSpec {
            shape_kind: ShapeKind::Square,
            color: Color::Red,
            motion,
            speed: if motion == Motion::Still { 0.0 } else { 2.0 },
            start_pos: (20, 28),
            size: 12,
            camera_pan: pan,
            pan_span: span,
            noise_std: 0.0,
        }
    }

    fn modal(field: &FlowField, t: usize) -> (f32, f32) {
        let mut counts = std::collections::BTreeMap::new();
        for by in 0..field.blocks_y() {
            for bx in 0..field.blocks_x() {
                let (dx, dy) = field.block_flow(t, by, bx);
                *counts.entry((dx as i32, dy as i32)).or_insert(0) += 1;
            }
        }
        let ((dx, dy), _) = counts.into_iter().max_by_key(|&(_, c)| c).unwrap();
        (dx as f32, dy as f32)
    }

    #[test]
    fn static_clip_has_zero_flow_and_falls_back() {
        let clip = render_clip(&scene(Motion::Still, (0.0, 0.0), 7), geom(), 1).unwrap();
        let p = ActionAreaParams::default();
        let f = estimate_flow(&clip, &p).unwrap();
        assert_eq!(f.max_magnitude(), 0.0);
        let area = action_area_for_clip(&clip, TOY, &p).unwrap();
        assert!(area.fallback);
        assert_eq!(area.len(), 64);
    }

    #[test]
    fn global_translation_is_the_modal_displacement() {
        let clip = render_clip(&scene(Motion::Still, (2.0, 0.0), 7), geom(), 2).unwrap();
        let f = estimate_flow(&clip, &ActionAreaParams::default()).unwrap();
        for t in 0..f.flow.dim().0 {
            assert_eq!(modal(&f, t), (2.0, 0.0));
        }
    }

    #[test]
    fn object_blocks_move_and_background_does_not() {
        let clip = render_clip(&scene(Motion::Right, (0.0, 0.0), 7), geom(), 3).unwrap();
        let f = estimate_flow(&clip, &ActionAreaParams::default()).unwrap();
        for t in 0..f.flow.dim().0 {
            for by in 0..8 {
                for bx in 0..8 {
                    let (y0, x0) = (by * 8, bx * 8);
                    let covered = (y0..y0 + 8)
                        .flat_map(|y| (x0..x0 + 8).map(move |x| (y, x)))
                        .filter(|&(y, x)| clip.motion_mask[[t, y, x]])
                        .count();
                    let d = f.block_flow(t, by, bx);
                    if covered == 64 {
                        assert_eq!(d, (2.0, 0.0), "interior block ({by},{bx}) at t={t}");
                    }
                    let near = (t..=t + 1).any(|tt| {
                        (y0.saturating_sub(4)..(y0 + 12).min(64))
                            .flat_map(|y| (x0.saturating_sub(4)..(x0 + 12).min(64)).map(move |x| (y, x)))
                            .any(|(y, x)| clip.motion_mask[[tt, y, x]])
                    });
                    if !near {
                        assert_eq!(d, (0.0, 0.0), "background block ({by},{bx}) at t={t}");
                    }
                }
            }
        }
    }

    #[test]
    fn pure_pan_compensates_to_zero() {
        let spec = scene(Motion::Still, (1.0, -1.0), 3);
        let clip = render_clip(&spec, geom(), 4).unwrap();
        let f = compensate_camera(&estimate_flow(&clip, &ActionAreaParams::default()).unwrap());
        // edge blocks whose true match lies outside the next frame cannot be
        // matched; every other block must cancel exactly
        let mut checked = 0;
        for t in 0..f.flow.dim().0 {
            let (ox0, oy0) = crate::synthgen::camera_offset(&spec, t);
            let (ox1, oy1) = crate::synthgen::camera_offset(&spec, t + 1);
            let (dx, dy) = ((ox1 - ox0) as i64, (oy1 - oy0) as i64);
            for by in 0..8i64 {
                for bx in 0..8i64 {
                    let inside = by * 8 + dy >= 0 && by * 8 + 8 + dy <= 64 && bx * 8 + dx >= 0 && bx * 8 + 8 + dx <= 64;
                    if inside {
                        assert_eq!(
                            f.block_flow(t, by as usize, bx as usize),
                            (0.0, 0.0),
                            "block ({by},{bx}) t={t}"
                        );
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked >= 7 * 49);
    }

    #[test]
    fn zero_flow_stays_zero() {
        let f = FlowField {
            flow: Array4::zeros((3, 16, 16, 2)),
            block: 8,
        };
        assert_eq!(compensate_camera(&f), f);
    }

    #[test]
    fn object_with_pan_keeps_object_speed_after_compensation() {
        let clip = render_clip(&scene(Motion::Right, (-1.0, 0.0), 7), geom(), 5).unwrap();
        let f = compensate_camera(&estimate_flow(&clip, &ActionAreaParams::default()).unwrap());
        let mut obj = Vec::new();
        let mut bg = Vec::new();
        for t in 0..f.flow.dim().0 {
            for by in 0..8 {
                for bx in 0..8 {
                    let (y0, x0) = (by * 8, bx * 8);
                    let cov = |tt: usize| {
                        (y0..y0 + 8)
                            .flat_map(|y| (x0..x0 + 8).map(move |x| (y, x)))
                            .filter(|&(y, x)| clip.motion_mask[[tt, y, x]])
                            .count()
                    };
                    let (dx, dy) = f.block_flow(t, by, bx);
                    if cov(t) == 64 {
                        obj.push(dx.hypot(dy));
                    } else if cov(t) == 0 && cov(t + 1) == 0 {
                        bg.push(dx.hypot(dy));
                    }
                }
            }
        }
        let mean = |v: &[f32]| v.iter().sum::<f32>() / v.len() as f32;
        assert!(!obj.is_empty());
        // object moves +2, camera -1, so +1 relative to the frame; residual
        // after removing the -1 background motion is +2
        assert!((mean(&obj) - 2.0).abs() < 0.25, "object residual {}", mean(&obj));
        assert!(mean(&bg) < 0.25, "background residual {}", mean(&bg));
    }

    #[test]
    fn moving_square_is_found() {
        let clip = render_clip(&scene(Motion::Right, (0.0, 0.0), 7), geom(), 6).unwrap();
        let area = action_area_for_clip(&clip, TOY, &ActionAreaParams::default()).unwrap();
        let truth = object_patches(&clip, TOY).unwrap();
        let hit = truth.iter().filter(|&&(y, x)| area.contains(y, x)).count();
        assert!(hit as f64 / truth.len() as f64 >= 0.8);
        assert!(hit as f64 / area.len() as f64 >= 0.5);
        assert!(!area.fallback);
    }

    #[test]
    fn mismatched_dims_are_rejected() {
        let f = FlowField {
            flow: Array4::zeros((1, 16, 16, 2)),
            block: 8,
        };
        assert!(detect_action_area(&f, GridDims::new(1, 3, 3), TOY, 0.5).is_err());
    }

    #[test]
    fn one_frame_is_rejected() {
        let clip = VideoClip {
            pixels: Array4::zeros((1, 8, 8, 3)),
            motion_mask: Array3::from_elem((1, 8, 8), false),
            caption: "x".into(),
            action_label: 0,
            rng_seed: 0,
            scene: None,
        };
        assert!(estimate_flow(&clip, &ActionAreaParams::default()).is_err());
    }

    fn random_field(vals: &[i8], n: usize) -> FlowField {
        let mut f = FlowField {
            flow: Array4::zeros((n, 32, 32, 2)),
            block: 8,
        };
        let mut it = vals.iter().cycle();
        for t in 0..n {
            for by in 0..4 {
                for bx in 0..4 {
                    let dx = *it.next().unwrap() as f32;
                    let dy = *it.next().unwrap() as f32;
                    f.fill_block(t, by, bx, (dx, dy));
                }
            }
        }
        f
    }

    proptest! {
        #[test]
        fn area_is_never_empty_and_threshold_is_monotone(
            vals in prop::collection::vec(-4i8..=4, 1..64),
            a in 0.0f64..0.999,
            b in 0.0f64..0.999,
        ) {
            let f = random_field(&vals, 2);
            let dims = GridDims::new(1, 4, 4);
            let lo = detect_action_area(&f, dims, TOY, a.min(b)).unwrap();
            let hi = detect_action_area(&f, dims, TOY, a.max(b)).unwrap();
            prop_assert!(!lo.is_empty() && !hi.is_empty());
            for &(y, x) in &hi.patches {
                prop_assert!(lo.contains(y, x));
            }
            for &(y, x) in &lo.patches {
                prop_assert!(y < 4 && x < 4);
            }
        }
    }
}
