//! Synthetic moving-shape videos with exact motion masks and procedural captions.
//!
//! Every clip is a pure function of its [`SceneSpec`], the clip geometry and a
//! seed. Labels are the motion class, captions come from a fixed grammar, and
//! the per-frame `motion_mask` marks exactly the pixels covered by the object
//! (never the camera-induced background motion).

mod dataset;
mod render;
mod storage;

pub use dataset::{
    find_clip, generate_dataset, load_split, read_manifest, render_split, sample_scene, DataConfig, DatasetManifest,
    ManifestEntry, Split,
};
pub use render::{camera_offset, object_centroids, render_clip};
pub use storage::{load_clip, save_clip};

use ndarray::{Array3, Array4};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Square,
    Circle,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Square, ShapeKind::Circle, ShapeKind::Triangle];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Square => "square",
            ShapeKind::Circle => "circle",
            ShapeKind::Triangle => "triangle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Magenta,
    Cyan,
}

impl Color {
    pub const ALL: [Color; 6] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Yellow,
        Color::Magenta,
        Color::Cyan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Magenta => "magenta",
            Color::Cyan => "cyan",
        }
    }

    pub fn rgb(self) -> [f32; 3] {
        match self {
            Color::Red => [0.92, 0.12, 0.10],
            Color::Green => [0.10, 0.85, 0.15],
            Color::Blue => [0.12, 0.18, 0.95],
            Color::Yellow => [0.95, 0.90, 0.08],
            Color::Magenta => [0.90, 0.10, 0.88],
            Color::Cyan => [0.08, 0.90, 0.92],
        }
    }
}

/// Object motion; the enum index is the action label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Motion {
    Left,
    Right,
    Up,
    Down,
    Grow,
    Shrink,
    Rotate,
    Still,
}

impl Motion {
    pub const ALL: [Motion; 8] = [
        Motion::Left,
        Motion::Right,
        Motion::Up,
        Motion::Down,
        Motion::Grow,
        Motion::Shrink,
        Motion::Rotate,
        Motion::Still,
    ];

    pub const NUM_CLASSES: usize = 8;

    pub fn label(self) -> usize {
        self as usize
    }

    pub fn from_label(label: usize) -> Option<Motion> {
        Motion::ALL.get(label).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Motion::Left => "left",
            Motion::Right => "right",
            Motion::Up => "up",
            Motion::Down => "down",
            Motion::Grow => "grow",
            Motion::Shrink => "shrink",
            Motion::Rotate => "rotate",
            Motion::Still => "still",
        }
    }
}

/// Everything needed to render one clip (together with geometry and a seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub shape_kind: ShapeKind,
    pub color: Color,
    pub motion: Motion,
    /// Pixels per frame. For grow/shrink the object side changes by this much
    /// per frame; for rotate it is the tangential speed at the object's rim.
    pub speed: f32,
    /// Object centre at frame 0, in pixels.
    pub start_pos: (i32, i32),
    /// Side length (or diameter) at frame 0, in pixels.
    pub size: u32,
    /// Camera translation velocity (x, y) in pixels per frame.
    pub camera_pan: (f32, f32),
    /// The camera reverses direction every `pan_span` frames. A span of at
    /// least `frames - 1` gives a plain linear pan.
    pub pan_span: u32,
    pub noise_std: f32,
}

impl SceneSpec {
    pub fn validate(&self) -> crate::Result<()> {
        if self.motion != Motion::Still && !(self.speed > 0.0) {
            return Err(crate::error::invalid(format!(
                "speed must be > 0 for motion {}, got {}",
                self.motion.name(),
                self.speed
            )));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(crate::error::invalid("noise_std must be finite and >= 0"));
        }
        if self.size == 0 {
            return Err(crate::error::invalid("object size must be > 0"));
        }
        if self.pan_span == 0 {
            return Err(crate::error::invalid("pan_span must be >= 1"));
        }
        if !self.camera_pan.0.is_finite() || !self.camera_pan.1.is_finite() {
            return Err(crate::error::invalid("camera_pan must be finite"));
        }
        Ok(())
    }

    pub fn has_camera_motion(&self) -> bool {
        self.camera_pan.0 != 0.0 || self.camera_pan.1 != 0.0
    }
}

/// Frame count and frame size of a clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipGeometry {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

/// A rendered clip. Pixel values lie on the 1/255 lattice so that the stored
/// 8-bit file reproduces them exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    /// `[T, H, W, 3]`, values in `[0, 1]`.
    pub pixels: Array4<f32>,
    /// `[T, H, W]`, true on the moving object.
    pub motion_mask: Array3<bool>,
    pub caption: String,
    pub action_label: usize,
    pub rng_seed: u64,
    pub scene: Option<SceneSpec>,
}

impl VideoClip {
    pub fn geometry(&self) -> ClipGeometry {
        let (frames, height, width, _) = self.pixels.dim();
        ClipGeometry { frames, height, width }
    }
}

/// Caption grammar: "the <color> <shape> moves <motion>" or "... stays still".
pub fn caption_of(spec: &SceneSpec) -> String {
    caption_for(spec.color, spec.shape_kind, spec.motion)
}

pub fn caption_for(color: Color, shape: ShapeKind, motion: Motion) -> String {
    match motion {
        Motion::Still => format!("the {} {} stays still", color.name(), shape.name()),
        m => format!("the {} {} moves {}", color.name(), shape.name(), m.name()),
    }
}

/// Every word the caption grammar can emit, in a fixed order.
pub fn caption_vocabulary() -> Vec<&'static str> {
    let mut words = vec!["the", "moves", "stays"];
    words.extend(Color::ALL.iter().map(|c| c.name()));
    words.extend(ShapeKind::ALL.iter().map(|s| s.name()));
    words.extend(Motion::ALL.iter().map(|m| m.name()));
    words
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn spec(color: Color, shape: ShapeKind, motion: Motion) -> SceneSpec {
        SceneSpec {
            shape_kind: shape,
            color,
            motion,
            speed: 1.0,
            start_pos: (32, 32),
            size: 12,
            camera_pan: (0.0, 0.0),
            pan_span: 15,
            noise_std: 0.0,
        }
    }

    #[test]
    fn caption_templates() {
        assert_eq!(
            caption_of(&spec(Color::Red, ShapeKind::Square, Motion::Left)),
            "the red square moves left"
        );
        assert_eq!(
            caption_of(&spec(Color::Blue, ShapeKind::Circle, Motion::Still)),
            "the blue circle stays still"
        );
    }

    #[test]
    fn captions_are_injective_over_the_grammar() {
        let mut seen = HashSet::new();
        let mut count = 0;
        for c in Color::ALL {
            for s in ShapeKind::ALL {
                for m in Motion::ALL {
                    seen.insert(caption_for(c, s, m));
                    count += 1;
                }
            }
        }
        assert_eq!(count, 6 * 3 * 8);
        assert_eq!(seen.len(), count);
    }

    #[test]
    fn vocabulary_covers_every_caption() {
        let vocab: HashSet<_> = caption_vocabulary().into_iter().collect();
        for c in Color::ALL {
            for s in ShapeKind::ALL {
                for m in Motion::ALL {
                    for w in caption_for(c, s, m).split_whitespace() {
                        assert!(vocab.contains(w), "{w} missing");
                    }
                }
            }
        }
    }

    #[test]
    fn labels_round_trip() {
        for (i, m) in Motion::ALL.iter().enumerate() {
            assert_eq!(m.label(), i);
            assert_eq!(Motion::from_label(i), Some(*m));
        }
        assert_eq!(Motion::from_label(8), None);
    }
}
