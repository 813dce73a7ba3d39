use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::render::render_clip;
use super::storage::{load_clip, save_clip};
use super::{ClipGeometry, Color, Motion, SceneSpec, ShapeKind, VideoClip};
use crate::error::{invalid, FilsError};
use crate::util::{mix_seed, sha256_hex};
use crate::Result;

/// Dataset generation parameters (`[data]` section of the run config).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub dir: PathBuf,
    pub clip_count: usize,
    pub val_clip_count: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub noise_std: f32,
    pub speed_min: f32,
    pub speed_max: f32,
    pub size_min: u32,
    pub size_max: u32,
    /// Probability that a clip gets camera motion.
    pub pan_prob: f64,
    /// Largest integer pan speed per axis, pixels per frame.
    pub pan_max: i32,
    pub pan_span_min: u32,
    pub pan_span_max: u32,
}

impl DataConfig {
    pub fn geometry(&self) -> ClipGeometry {
        ClipGeometry {
            frames: self.frames,
            height: self.height,
            width: self.width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(FilsError::Config(format!("[data] {m}")));
        if self.frames < 2 || self.height == 0 || self.width == 0 {
            return bad("frames must be >= 2 and height/width > 0");
        }
        if !(self.speed_min > 0.0 && self.speed_min <= self.speed_max) {
            return bad("need 0 < speed_min <= speed_max");
        }
        if self.size_min < 2 || self.size_min > self.size_max {
            return bad("need 2 <= size_min <= size_max");
        }
        if !(0.0..=1.0).contains(&self.pan_prob) || self.pan_max < 0 {
            return bad("pan_prob must be in [0, 1] and pan_max >= 0");
        }
        if self.pan_span_min == 0 || self.pan_span_min > self.pan_span_max {
            return bad("need 1 <= pan_span_min <= pan_span_max");
        }
        if !(self.noise_std >= 0.0) {
            return bad("noise_std must be >= 0");
        }
        Ok(())
    }

    /// Hash of every field that influences the emitted bytes (plus the seed).
    pub fn hash_with_seed(&self, seed: u64) -> String {
        let mut hashed = self.clone();
        // output location does not change content
        hashed.dir = PathBuf::new();
        let json = serde_json::to_string(&(&hashed, seed)).expect("config serializes");
        sha256_hex(json.as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }

    fn salt(self) -> u64 {
        match self {
            Split::Train => 0x7261_696e,
            Split::Val => 0x0076_616c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the split directory.
    pub path: PathBuf,
    pub label: usize,
    pub caption: String,
    pub seed: u64,
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub split: Split,
    pub clip_count: usize,
    pub num_classes: usize,
    pub class_counts: BTreeMap<usize, usize>,
    pub config_hash: String,
    pub geometry: ClipGeometry,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FORMAT: &str = "fils-manifest";
pub const MANIFEST_FILE: &str = "manifest.json";

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.entries.len() != self.clip_count {
            return Err(invalid(format!(
                "manifest lists {} entries but clip_count = {}",
                self.entries.len(),
                self.clip_count
            )));
        }
        if let Some(e) = self.entries.iter().find(|e| e.label >= self.num_classes) {
            return Err(invalid(format!("entry {} has label {} out of range", e.id, e.label)));
        }
        Ok(())
    }
}

/// Draw a scene of the given motion class whose trajectory fits the frame.
pub fn sample_scene(cfg: &DataConfig, motion: Motion, rng: &mut impl Rng) -> Result<SceneSpec> {
    let geom = cfg.geometry();
    let span_t = (geom.frames - 1) as f32;
    for _ in 0..2000 {
        let speed = if motion == Motion::Still {
            0.0
        } else {
            rng.random_range(cfg.speed_min..=cfg.speed_max)
        };
        let mut size = rng.random_range(cfg.size_min..=cfg.size_max);
        if motion == Motion::Shrink {
            size += (speed * span_t).ceil() as u32;
        }
        let (camera_pan, pan_span) = if cfg.pan_max > 0 && rng.random_bool(cfg.pan_prob) {
            let mut pan = (0, 0);
            while pan == (0, 0) {
                pan = (
                    rng.random_range(-cfg.pan_max..=cfg.pan_max),
                    rng.random_range(-cfg.pan_max..=cfg.pan_max),
                );
            }
            (
                (pan.0 as f32, pan.1 as f32),
                rng.random_range(cfg.pan_span_min..=cfg.pan_span_max),
            )
        } else {
            ((0.0, 0.0), cfg.pan_span_max.max(1))
        };
        let spec = SceneSpec {
            shape_kind: *ShapeKind::ALL.choose(rng).unwrap(),
            color: *Color::ALL.choose(rng).unwrap(),
            motion,
            speed,
            start_pos: (
                rng.random_range(0..geom.width as i32),
                rng.random_range(0..geom.height as i32),
            ),
            size,
            camera_pan,
            pan_span,
            noise_std: cfg.noise_std,
        };
        if super::render::check_fits(&spec, geom) {
            return Ok(spec);
        }
    }
    Err(invalid(format!(
        "could not place a {} object inside a {}x{} frame; reduce size or speed",
        motion.name(),
        geom.width,
        geom.height
    )))
}

fn clip_seed(seed: u64, split: Split, index: usize) -> u64 {
    mix_seed(mix_seed(seed, split.salt()), index as u64)
}

/// Balanced label sequence (counts differ by at most one), shuffled.
fn balanced_labels(count: usize, seed: u64, split: Split) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..count).map(|i| i % Motion::NUM_CLASSES).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, split.salt() ^ 0x1abe1));
    labels.shuffle(&mut rng);
    labels
}

/// Render one split in memory (no files).
pub fn render_split(cfg: &DataConfig, seed: u64, split: Split) -> Result<Vec<VideoClip>> {
    let count = match split {
        Split::Train => cfg.clip_count,
        Split::Val => cfg.val_clip_count,
    };
    let labels = balanced_labels(count, seed, split);
    labels
        .par_iter()
        .enumerate()
        .map(|(i, &label)| {
            let s = clip_seed(seed, split, i);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let spec = sample_scene(cfg, Motion::from_label(label).unwrap(), &mut rng)?;
            render_clip(&spec, cfg.geometry(), s)
        })
        .collect()
}

fn write_split(cfg: &DataConfig, seed: u64, split: Split, out_dir: &Path) -> Result<DatasetManifest> {
    let split_dir = out_dir.join(split.name());
    let clip_dir = split_dir.join("clips");
    std::fs::create_dir_all(&clip_dir).map_err(|e| FilsError::io(&clip_dir, e))?;
    let clips = render_split(cfg, seed, split)?;
    let entries: Vec<ManifestEntry> = clips
        .par_iter()
        .enumerate()
        .map(|(i, clip)| {
            let rel = PathBuf::from("clips").join(format!("{i:06}.clip"));
            let checksum = save_clip(clip, &split_dir.join(&rel))?;
            Ok(ManifestEntry {
                id: format!("{}/{i:06}", split.name()),
                path: rel,
                label: clip.action_label,
                caption: clip.caption.clone(),
                seed: clip.rng_seed,
                checksum,
            })
        })
        .collect::<Result<_>>()?;
    let mut class_counts: BTreeMap<usize, usize> = (0..Motion::NUM_CLASSES).map(|c| (c, 0)).collect();
    for e in &entries {
        *class_counts.get_mut(&e.label).unwrap() += 1;
    }
    let manifest = DatasetManifest {
        format: MANIFEST_FORMAT.to_string(),
        version: 1,
        split,
        clip_count: entries.len(),
        num_classes: Motion::NUM_CLASSES,
        class_counts,
        config_hash: cfg.hash_with_seed(seed),
        geometry: cfg.geometry(),
        entries,
    };
    let path = split_dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, json).map_err(|e| FilsError::io(&path, e))?;
    Ok(manifest)
}

/// Render and store the train split (and the val split when
/// `val_clip_count > 0`) under `out_dir/<split>/`.
pub fn generate_dataset(cfg: &DataConfig, seed: u64, out_dir: &Path, force: bool) -> Result<Vec<DatasetManifest>> {
    cfg.validate()?;
    if cfg.clip_count == 0 {
        return Err(invalid("clip_count must be > 0; an empty dataset is useless"));
    }
    let mut splits = vec![Split::Train];
    if cfg.val_clip_count > 0 {
        splits.push(Split::Val);
    }
    if !force {
        for s in &splits {
            let m = out_dir.join(s.name()).join(MANIFEST_FILE);
            if m.exists() {
                return Err(FilsError::AlreadyExists(m));
            }
        }
    }
    splits
        .into_iter()
        .map(|s| {
            let manifest = write_split(cfg, seed, s, out_dir)?;
            log::info!(
                "wrote {} {} clips to {}",
                manifest.clip_count,
                s.name(),
                out_dir.join(s.name()).display()
            );
            Ok(manifest)
        })
        .collect()
}

pub fn read_manifest(dir: &Path, split: Split) -> Result<DatasetManifest> {
    let path = dir.join(split.name()).join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| FilsError::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| FilsError::format(&path, e.to_string()))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(FilsError::format(&path, "not a fils manifest"));
    }
    manifest.validate()?;
    Ok(manifest)
}

/// Load a split's manifest and all its clips.
pub fn load_split(dir: &Path, split: Split) -> Result<(DatasetManifest, Vec<VideoClip>)> {
    let manifest = read_manifest(dir, split)?;
    let split_dir = dir.join(split.name());
    let clips = manifest
        .entries
        .par_iter()
        .map(|e| load_clip(&split_dir.join(&e.path)))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, clips))
}

/// Look a clip up by manifest id, searching the val split before train.
pub fn find_clip(dir: &Path, id: &str) -> Result<VideoClip> {
    for split in [Split::Val, Split::Train] {
        let Ok(manifest) = read_manifest(dir, split) else {
            continue;
        };
        if let Some(e) = manifest.entries.iter().find(|e| e.id == id) {
            return load_clip(&dir.join(split.name()).join(&e.path));
        }
    }
    Err(invalid(format!("no clip with id {id:?} under {}", dir.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_config(dir: &Path) -> DataConfig {
        DataConfig {
            dir: dir.to_path_buf(),
            clip_count: 80,
            val_clip_count: 8,
            frames: 4,
            height: 32,
            width: 32,
            noise_std: 0.02,
            speed_min: 1.0,
            speed_max: 2.0,
            size_min: 6,
            size_max: 8,
            pan_prob: 0.3,
            pan_max: 1,
            pan_span_min: 1,
            pan_span_max: 3,
        }
    }

    #[test]
    fn eighty_clips_are_exactly_balanced() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        let manifests = generate_dataset(&cfg, 5, dir.path(), false).unwrap();
        let train = &manifests[0];
        assert_eq!(train.clip_count, 80);
        assert!(train.class_counts.values().all(|&c| c == 10));
        assert_eq!(manifests[1].clip_count, 8);
        let (m, clips) = load_split(dir.path(), Split::Train).unwrap();
        assert_eq!(&m, train);
        for (e, c) in m.entries.iter().zip(&clips) {
            assert_eq!(e.label, c.action_label);
            assert_eq!(e.caption, c.caption);
        }
    }

    #[test]
    fn uneven_counts_balance_within_one() {
        let labels = balanced_labels(21, 3, Split::Train);
        let mut counts = [0usize; 8];
        for l in labels {
            counts[l] += 1;
        }
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(dir.path());
        cfg.clip_count = 0;
        assert!(generate_dataset(&cfg, 1, dir.path(), false).is_err());
    }

    #[test]
    fn existing_manifest_needs_force() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(dir.path());
        cfg.clip_count = 8;
        cfg.val_clip_count = 0;
        generate_dataset(&cfg, 1, dir.path(), false).unwrap();
        let err = generate_dataset(&cfg, 1, dir.path(), false).unwrap_err();
        assert!(matches!(err, FilsError::AlreadyExists(_)));
        generate_dataset(&cfg, 1, dir.path(), true).unwrap();
    }

    #[test]
    fn same_seed_reproduces_hash_and_checksums() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let mut cfg = small_config(a.path());
        cfg.clip_count = 16;
        cfg.val_clip_count = 0;
        let ma = generate_dataset(&cfg, 42, a.path(), false).unwrap();
        let mb = generate_dataset(&cfg, 42, b.path(), false).unwrap();
        assert_eq!(ma[0].config_hash, mb[0].config_hash);
        let sums = |m: &DatasetManifest| m.entries.iter().map(|e| e.checksum.clone()).collect::<Vec<_>>();
        assert_eq!(sums(&ma[0]), sums(&mb[0]));
        let mc = generate_dataset(&cfg, 43, b.path(), true).unwrap();
        assert_ne!(ma[0].config_hash, mc[0].config_hash);
    }
}
