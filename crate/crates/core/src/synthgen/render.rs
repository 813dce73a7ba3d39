use ndarray::{Array3, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{caption_of, ClipGeometry, Motion, SceneSpec, ShapeKind, VideoClip};
use crate::error::invalid;
use crate::Result;

const BG_SALT: u64 = 0x0b6d_5eed;
const OBJ_SALT: u64 = 0x0b1e_c7ed;
const NOISE_SALT: u64 = 0x5e_ed_0f_f5;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Pseudo-random lattice value in [-1, 1].
fn lattice(seed: u64, ix: i64, iy: i64, salt: u64) -> f64 {
    let h = splitmix64(seed ^ splitmix64(ix as u64 ^ splitmix64(iy as u64 ^ salt)));
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// Smooth value noise; continuous in (x, y) so integer camera shifts reproduce
/// pixels exactly.
fn value_noise(seed: u64, x: f64, y: f64, cell: f64, salt: u64) -> f64 {
    let gx = x / cell;
    let gy = y / cell;
    let x0 = gx.floor();
    let y0 = gy.floor();
    let fx = gx - x0;
    let fy = gy - y0;
    let sx = fx * fx * (3.0 - 2.0 * fx);
    let sy = fy * fy * (3.0 - 2.0 * fy);
    let (ix, iy) = (x0 as i64, y0 as i64);
    let v00 = lattice(seed, ix, iy, salt);
    let v10 = lattice(seed, ix + 1, iy, salt);
    let v01 = lattice(seed, ix, iy + 1, salt);
    let v11 = lattice(seed, ix + 1, iy + 1, salt);
    let a = v00 + (v10 - v00) * sx;
    let b = v01 + (v11 - v01) * sx;
    a + (b - a) * sy
}

fn background(seed: u64, x: f64, y: f64) -> [f64; 3] {
    let lum = 0.5 + 0.15 * value_noise(seed, x, y, 9.0, BG_SALT) + 0.10 * value_noise(seed, x, y, 3.0, BG_SALT + 1);
    let mut rgb = [0.0; 3];
    for (c, v) in rgb.iter_mut().enumerate() {
        *v = lum + 0.03 * value_noise(seed, x, y, 6.0, BG_SALT + 2 + c as u64);
    }
    rgb
}

/// Ping-pong position in [0, span] for integer frame t.
fn triangle_wave(t: usize, span: u32) -> f64 {
    let span = span as usize;
    let period = 2 * span;
    let m = t % period;
    if m <= span {
        m as f64
    } else {
        (period - m) as f64
    }
}

/// Camera translation (x, y) at frame t.
pub fn camera_offset(spec: &SceneSpec, t: usize) -> (f64, f64) {
    let k = triangle_wave(t, spec.pan_span);
    (spec.camera_pan.0 as f64 * k, spec.camera_pan.1 as f64 * k)
}

/// Object pose at frame t: (centre x, centre y, side length, angle).
fn object_pose(spec: &SceneSpec, t: usize) -> (f64, f64, f64, f64) {
    let tf = t as f64;
    let v = spec.speed as f64;
    let (mut cx, mut cy) = (spec.start_pos.0 as f64, spec.start_pos.1 as f64);
    let mut size = spec.size as f64;
    let mut angle = 0.0;
    match spec.motion {
        Motion::Left => cx -= v * tf,
        Motion::Right => cx += v * tf,
        Motion::Up => cy -= v * tf,
        Motion::Down => cy += v * tf,
        Motion::Grow => size += v * tf,
        Motion::Shrink => size -= v * tf,
        Motion::Rotate => angle = v / (spec.size as f64 / 2.0) * tf,
        Motion::Still => {}
    }
    let (ox, oy) = camera_offset(spec, t);
    (cx + ox, cy + oy, size, angle)
}

fn bounding_radius(shape: ShapeKind, size: f64) -> f64 {
    match shape {
        ShapeKind::Circle => size / 2.0,
        ShapeKind::Square | ShapeKind::Triangle => size * std::f64::consts::SQRT_2 / 2.0,
    }
}

fn inside(shape: ShapeKind, lx: f64, ly: f64, size: f64) -> bool {
    let h = size / 2.0;
    match shape {
        ShapeKind::Square => lx.abs() <= h && ly.abs() <= h,
        ShapeKind::Circle => lx * lx + ly * ly <= h * h,
        ShapeKind::Triangle => {
            // apex up, base down
            let (ax, ay, bx, by, cx, cy) = (0.0, -h, -h, h, h, h);
            let e = |x0: f64, y0: f64, x1: f64, y1: f64| (x1 - x0) * (ly - y0) - (y1 - y0) * (lx - x0);
            let d1 = e(ax, ay, bx, by);
            let d2 = e(bx, by, cx, cy);
            let d3 = e(cx, cy, ax, ay);
            let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
            let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
            !(neg && pos)
        }
    }
}

fn check_trajectory(spec: &SceneSpec, geom: ClipGeometry) -> Result<()> {
    for t in 0..geom.frames {
        let (cx, cy, size, _) = object_pose(spec, t);
        if size < 2.0 {
            return Err(invalid(format!(
                "object shrinks to {size:.2} px at frame {t} (minimum 2)"
            )));
        }
        let r = bounding_radius(spec.shape_kind, size);
        if cx - r < 0.0 || cy - r < 0.0 || cx + r > geom.width as f64 || cy + r > geom.height as f64 {
            return Err(invalid(format!(
                "trajectory leaves the {}x{} frame at frame {t} (centre ({cx:.1}, {cy:.1}), radius {r:.1})",
                geom.width, geom.height
            )));
        }
    }
    Ok(())
}

pub(crate) fn check_fits(spec: &SceneSpec, geom: ClipGeometry) -> bool {
    spec.validate().is_ok() && check_trajectory(spec, geom).is_ok()
}

/// Render a clip. Deterministic in `(spec, geometry, seed)`.
pub fn render_clip(spec: &SceneSpec, geom: ClipGeometry, seed: u64) -> Result<VideoClip> {
    spec.validate()?;
    if geom.frames == 0 || geom.height == 0 || geom.width == 0 {
        return Err(invalid("clip geometry must be non-empty"));
    }
    check_trajectory(spec, geom)?;

    let ClipGeometry { frames, height, width } = geom;
    let mut pixels = Array4::<f32>::zeros((frames, height, width, 3));
    let mut mask = Array3::<bool>::from_elem((frames, height, width), false);
    let base = spec.color.rgb();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ NOISE_SALT);
    let noise = if spec.noise_std > 0.0 {
        Some(Normal::new(0.0f64, spec.noise_std as f64).map_err(|e| invalid(e.to_string()))?)
    } else {
        None
    };

    for t in 0..frames {
        let (ox, oy) = camera_offset(spec, t);
        let (cx, cy, size, angle) = object_pose(spec, t);
        let (sin, cos) = angle.sin_cos();
        for y in 0..height {
            for x in 0..width {
                let px = x as f64 + 0.5;
                let py = y as f64 + 0.5;
                let dx = px - cx;
                let dy = py - cy;
                // rotate into the object frame
                let lx = cos * dx + sin * dy;
                let ly = -sin * dx + cos * dy;
                let rgb = if inside(spec.shape_kind, lx, ly, size) {
                    mask[[t, y, x]] = true;
                    let u = lx / size;
                    let v = ly / size;
                    let half = if lx > 0.0 { 0.72 } else { 1.0 };
                    let shade = half * (1.0 + 0.2 * value_noise(seed, u, v, 0.22, OBJ_SALT));
                    [base[0] as f64 * shade, base[1] as f64 * shade, base[2] as f64 * shade]
                } else {
                    background(seed, px - ox, py - oy)
                };
                for c in 0..3 {
                    let mut v = rgb[c];
                    if let Some(n) = &noise {
                        v += n.sample(&mut rng);
                    }
                    pixels[[t, y, x, c]] = quantize(v);
                }
            }
        }
    }

    Ok(VideoClip {
        pixels,
        motion_mask: mask,
        caption: caption_of(spec),
        action_label: spec.motion.label(),
        rng_seed: seed,
        scene: Some(spec.clone()),
    })
}

fn quantize(v: f64) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() as f32 / 255.0
}

/// Per-frame centroid (x, y) of the motion mask in continuous pixel
/// coordinates, `None` for empty frames.
pub fn object_centroids(clip: &VideoClip) -> Vec<Option<(f64, f64)>> {
    let (frames, height, width) = clip.motion_mask.dim();
    (0..frames)
        .map(|t| {
            let mut n = 0usize;
            let (mut sx, mut sy) = (0.0, 0.0);
            for y in 0..height {
                for x in 0..width {
                    if clip.motion_mask[[t, y, x]] {
                        n += 1;
                        sx += x as f64 + 0.5;
                        sy += y as f64 + 0.5;
                    }
                }
            }
            (n > 0).then(|| (sx / n as f64, sy / n as f64))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::Color;

    const GEOM: ClipGeometry = ClipGeometry {
        frames: 16,
        height: 64,
        width: 64,
    };

    fn square(motion: Motion, speed: f32) -> SceneSpec {
        SceneSpec {
            shape_kind: ShapeKind::Square,
            color: Color::Red,
            motion,
            speed,
            start_pos: (16, 32),
            size: 10,
            camera_pan: (0.0, 0.0),
            pan_span: 15,
            noise_std: 0.02,
        }
    }

    #[test]
    fn still_clip_has_constant_mask_and_still_caption() {
        let clip = render_clip(&square(Motion::Still, 0.0), GEOM, 7).unwrap();
        let first = clip.motion_mask.index_axis(ndarray::Axis(0), 0).to_owned();
        for t in 1..16 {
            assert_eq!(clip.motion_mask.index_axis(ndarray::Axis(0), t), first);
        }
        assert!(clip.caption.contains("still"));
        assert_eq!(clip.action_label, Motion::Still.label());
    }

    #[test]
    fn rendering_is_bit_identical_for_the_same_seed() {
        let spec = square(Motion::Right, 1.5);
        let a = render_clip(&spec, GEOM, 11).unwrap();
        let b = render_clip(&spec, GEOM, 11).unwrap();
        assert_eq!(a, b);
        let c = render_clip(&spec, GEOM, 12).unwrap();
        assert_ne!(a.pixels, c.pixels);
    }

    #[test]
    fn right_moving_centroid_follows_closed_form_trajectory() {
        let spec = square(Motion::Right, 2.0);
        let clip = render_clip(&spec, GEOM, 3).unwrap();
        for (t, c) in object_centroids(&clip).into_iter().enumerate() {
            let (cx, cy) = c.expect("object visible");
            let expected_x = spec.start_pos.0 as f64 + 2.0 * t as f64;
            assert!((cx - expected_x).abs() < 1e-9, "frame {t}: {cx} vs {expected_x}");
            assert!((cy - spec.start_pos.1 as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn pixels_lie_on_the_byte_lattice() {
        let mut spec = square(Motion::Grow, 1.0);
        spec.start_pos = (32, 32);
        let clip = render_clip(&spec, GEOM, 5).unwrap();
        for &v in clip.pixels.iter() {
            assert!((0.0..=1.0).contains(&v));
            let k = v * 255.0;
            assert!((k - k.round()).abs() < 1e-3);
        }
    }

    #[test]
    fn trajectory_leaving_frame_is_rejected() {
        let mut spec = square(Motion::Right, 3.0);
        spec.start_pos = (40, 32);
        let err = render_clip(&spec, GEOM, 1).unwrap_err();
        assert!(err.to_string().contains("leaves"), "{err}");
    }

    #[test]
    fn camera_pan_never_marks_background() {
        let mut spec = square(Motion::Still, 0.0);
        spec.start_pos = (32, 32);
        spec.camera_pan = (2.0, 0.0);
        spec.pan_span = 2;
        let clip = render_clip(&spec, GEOM, 9).unwrap();
        let per_frame: Vec<usize> = (0..16)
            .map(|t| {
                clip.motion_mask
                    .index_axis(ndarray::Axis(0), t)
                    .iter()
                    .filter(|&&m| m)
                    .count()
            })
            .collect();
        assert!(per_frame.iter().all(|&n| n == per_frame[0]));
        assert_eq!(per_frame[0], 100);
    }

    #[test]
    fn integer_pan_translates_background_exactly() {
        let mut spec = square(Motion::Still, 0.0);
        spec.start_pos = (16, 32);
        spec.size = 4;
        spec.noise_std = 0.0;
        spec.camera_pan = (2.0, 0.0);
        spec.pan_span = 15;
        let clip = render_clip(&spec, GEOM, 4).unwrap();
        // background pixel (x, y) at frame 1 equals pixel (x - 2, y) at frame 0
        for y in 0..8 {
            for x in 2..64 {
                for c in 0..3 {
                    assert_eq!(clip.pixels[[1, y, x, c]], clip.pixels[[0, y, x - 2, c]]);
                }
            }
        }
    }
}
