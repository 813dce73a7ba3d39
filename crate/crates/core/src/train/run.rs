use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::augment::random_resized_crop;
use super::checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FILE};
use super::state::TrainState;
use super::step::{pretrain_step, BatchItem, StepMetrics};
use crate::action_area::{action_area_for_clip, ActionArea};
use crate::config::FilsConfig;
use crate::ema::tau_at;
use crate::error::FilsError;
use crate::model::params::snapshot;
use crate::synthgen::{load_split, Split, VideoClip};
use crate::tokenize::{tubeify, tubeify_pixels};
use crate::util::mix_seed;
use crate::Result;

pub const METRICS_FILE: &str = "metrics.jsonl";

const ORDER_STREAM: u64 = 0x6f72_6465;
const CROP_STREAM: u64 = 0x6372_6f70;

/// Training clips with their action areas, computed once per run.
pub struct TrainingData {
    pub clips: Vec<VideoClip>,
    pub areas: Vec<ActionArea>,
}

impl TrainingData {
    pub fn from_clips(cfg: &FilsConfig, clips: Vec<VideoClip>) -> Result<Self> {
        let geom = cfg.data.geometry();
        if let Some(c) = clips.iter().find(|c| c.geometry() != geom) {
            return Err(FilsError::Config(format!(
                "clip geometry {:?} does not match [data] {:?}",
                c.geometry(),
                geom
            )));
        }
        let areas = clips
            .par_iter()
            .map(|c| action_area_for_clip(c, cfg.patch, &cfg.action_area))
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainingData { clips, areas })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    /// Batch of the given clip indices, cropped when the config asks for it.
    pub fn batch(&self, cfg: &FilsConfig, indices: &[usize], step: u64) -> Result<Vec<BatchItem>> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed ^ CROP_STREAM, step));
        let scale = (cfg.train.crop_scale_min, cfg.train.crop_scale_max);
        indices
            .iter()
            .map(|&i| {
                let clip = &self.clips[i];
                let (grid, area) = if scale.0 >= 1.0 {
                    (tubeify(clip, cfg.patch)?, self.areas[i].clone())
                } else {
                    let (px, area) =
                        random_resized_crop(&clip.pixels, &self.areas[i], cfg.patch.spatial, scale, &mut rng)?;
                    (tubeify_pixels(&px, cfg.patch)?, area)
                };
                Ok(BatchItem {
                    grid,
                    area,
                    caption: clip.caption.clone(),
                    clip_seed: clip.rng_seed,
                })
            })
            .collect()
    }
}

pub fn load_training_data(cfg: &FilsConfig) -> Result<TrainingData> {
    let (manifest, clips) = load_split(&cfg.data.dir, Split::Train)?;
    if manifest.clip_count != cfg.data.clip_count {
        return Err(FilsError::Config(format!(
            "dataset at {} has {} training clips, config expects {}",
            cfg.data.dir.display(),
            manifest.clip_count,
            cfg.data.clip_count
        )));
    }
    TrainingData::from_clips(cfg, clips)
}

fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed ^ ORDER_STREAM, epoch)));
    order
}

pub fn read_metrics(path: &Path) -> Result<Vec<StepMetrics>> {
    let text = std::fs::read_to_string(path).map_err(|e| FilsError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| FilsError::format(path, e.to_string())))
        .collect()
}

/// Keep only rows up to `step`, dropping work done after the last checkpoint.
fn truncate_metrics(path: &Path, step: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let kept: Vec<String> = read_metrics(path)?
        .into_iter()
        .filter(|m| m.step <= step)
        .map(|m| serde_json::to_string(&m))
        .collect::<std::result::Result<_, _>>()?;
    let mut body = kept.join("\n");
    if !body.is_empty() {
        body.push('\n');
    }
    std::fs::write(path, body).map_err(|e| FilsError::io(path, e))
}

/// Teacher after a step must equal τΔ_prev + (1−τ)θ_new.
fn check_ema_invariant(
    before: &std::collections::BTreeMap<String, candle_core::Tensor>,
    state: &TrainState,
    tau: f64,
) -> Result<()> {
    for (name, prev) in before {
        let rest = name.strip_prefix(crate::model::TEACHER).unwrap_or(name);
        let theta = state.params[&format!("{}{rest}", crate::model::STUDENT)].as_tensor();
        let expect = (prev.affine(tau, 0.0)? + theta.affine(1.0 - tau, 0.0)?)?;
        let diff = (state.teacher[name].as_tensor() - expect)?
            .abs()?
            .flatten_all()?
            .max(0)?
            .to_scalar::<f32>()?;
        if diff > 1e-6 {
            return Err(FilsError::NonFinite(format!(
                "teacher tensor {name} deviates from the EMA rule by {diff}"
            )));
        }
    }
    Ok(())
}

/// Train per the config, writing `checkpoint.safetensors` and `metrics.jsonl`
/// under `[train] out_dir`. Returns the checkpoint path.
pub fn pretrain(cfg: &FilsConfig, resume: bool) -> Result<PathBuf> {
    let data = load_training_data(cfg)?;
    pretrain_on(cfg, &data, resume, None)
}

/// As [`pretrain`] on preloaded data; `stop_after` ends the run (with a
/// checkpoint) after that many total steps.
pub fn pretrain_on(cfg: &FilsConfig, data: &TrainingData, resume: bool, stop_after: Option<u64>) -> Result<PathBuf> {
    cfg.validate()?;
    if data.len() < cfg.train.batch_size {
        return Err(FilsError::Config("fewer clips than one batch".into()));
    }
    let out = &cfg.train.out_dir;
    let ckpt = out.join(CHECKPOINT_FILE);
    let metrics_path = out.join(METRICS_FILE);
    let mut state = if ckpt.exists() {
        if !resume {
            return Err(FilsError::AlreadyExists(ckpt));
        }
        let ck = load_checkpoint(&ckpt)?;
        if &ck.config != cfg {
            return Err(FilsError::Config(format!(
                "{} was written with a different config; refusing to resume",
                ckpt.display()
            )));
        }
        log::info!("resuming from step {}", ck.step);
        TrainState::from_checkpoint(ck)?
    } else {
        if metrics_path.exists() && !resume {
            return Err(FilsError::AlreadyExists(metrics_path));
        }
        TrainState::new(cfg)?
    };
    std::fs::create_dir_all(out).map_err(|e| FilsError::io(out, e))?;
    truncate_metrics(&metrics_path, state.step)?;
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)
        .map_err(|e| FilsError::io(&metrics_path, e))?;

    let spe = cfg.steps_per_epoch();
    let total = cfg.total_steps();
    let end = stop_after.map_or(total, |s| s.min(total));
    let b = cfg.train.batch_size;
    let mut order: Option<(u64, Vec<usize>)> = None;
    while state.step < end {
        let epoch = state.step / spe;
        let pos = (state.step % spe) as usize;
        if order.as_ref().map(|o| o.0) != Some(epoch) {
            order = Some((epoch, epoch_order(cfg.seed, epoch, data.len())));
        }
        let idx = &order.as_ref().unwrap().1[pos * b..(pos + 1) * b];
        let batch = data.batch(cfg, idx, state.step)?;
        let check = (pos == 0).then(|| snapshot(&state.teacher)).transpose()?;
        let tau = tau_at(state.step, &cfg.ema_schedule());
        let m = pretrain_step(&mut state, &batch)?;
        if let Some(before) = check {
            check_ema_invariant(&before, &state, tau)?;
        }
        writeln!(log, "{}", serde_json::to_string(&m)?).map_err(|e| FilsError::io(&metrics_path, e))?;
        if m.step % 10 == 0 || m.step == end {
            log::info!(
                "step {}/{total} loss {:.4} lr {:.2e} tau {:.4}",
                m.step,
                m.loss,
                m.lr,
                m.tau
            );
        }
        let every = cfg.train.checkpoint_every;
        if m.step == end || (every > 0 && m.step % every == 0) {
            save_checkpoint(&state, &ckpt)?;
        }
    }
    if state.step == end && !ckpt.exists() {
        save_checkpoint(&state, &ckpt)?;
    }
    Ok(ckpt)
}
