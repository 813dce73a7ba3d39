//! Downstream evaluation on checkpoints: action-recognition probes and
//! text-to-patch similarity heatmaps.

mod heatmap;
mod probe;

pub use heatmap::{
    gaussian_smooth, heatmap_from_similarity, save_heatmap_png, save_mask_png, similarity_heatmap, Heatmap,
};
pub use probe::{probe, probe_dataset, probe_features, ProbeMode, ProbeResult};

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{Device, Tensor};
use ndarray::Array2;

use crate::config::FilsConfig;
use crate::model::{CoordBatch, ProjectionHead, TextEncoder, VideoEncoder, Vocab, PROJECTION, STUDENT, TEXT};
use crate::synthgen::VideoClip;
use crate::tokenize::{tubeify, GridDims};
use crate::train::{load_checkpoint, TrainState};
use crate::Result;

/// Inference view of a checkpoint: the student encoder, projection head and
/// frozen text encoder.
pub struct FilsModel {
    pub cfg: FilsConfig,
    /// Checkpoint path, or `random-init:<seed>`.
    pub id: String,
    pub grid: GridDims,
    pub tensors: BTreeMap<String, Tensor>,
    pub vocab: Vocab,
}

impl FilsModel {
    pub fn load(path: &Path) -> Result<Self> {
        let ck = load_checkpoint(path)?;
        let state = TrainState::from_checkpoint(ck)?;
        Ok(Self::from_state(&state, path.display().to_string()))
    }

    /// Untrained encoder with the config's architecture.
    pub fn random_init(cfg: &FilsConfig, seed: u64) -> Result<Self> {
        let mut cfg = cfg.clone();
        cfg.seed = seed;
        let state = TrainState::new(&cfg)?;
        Ok(Self::from_state(&state, format!("random-init:{seed}")))
    }

    pub fn from_state(state: &TrainState, id: String) -> Self {
        let mut tensors: BTreeMap<String, Tensor> = state
            .params
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().detach()))
            .collect();
        tensors.extend(state.text.iter().map(|(k, t)| (k.clone(), t.clone())));
        FilsModel {
            cfg: state.cfg.clone(),
            id,
            grid: state.grid,
            tensors,
            vocab: state.vocab.clone(),
        }
    }

    pub fn student(&self) -> Result<VideoEncoder> {
        VideoEncoder::load(&self.tensors, STUDENT, &self.cfg.encoder_config()?)
    }

    pub fn projection(&self) -> Result<ProjectionHead> {
        ProjectionHead::load(&self.tensors, PROJECTION, self.cfg.model.projection)
    }

    pub fn text_encoder(&self) -> Result<TextEncoder> {
        TextEncoder::load(&self.tensors, TEXT, &self.cfg.model, self.vocab.clone(), true)
    }

    pub fn device(&self) -> Device {
        Device::Cpu
    }

    /// Tokens and coordinates of a clip batch, `[B, N, Draw]`.
    pub(crate) fn tokens(&self, clips: &[&VideoClip]) -> Result<(Tensor, CoordBatch)> {
        let dev = self.device();
        let mut flat = Vec::new();
        let mut coords = Vec::with_capacity(clips.len());
        for c in clips {
            let g = tubeify(c, self.cfg.patch)?;
            if g.dims != self.grid {
                return Err(crate::error::FilsError::Shape(format!(
                    "clip grid {:?} does not match the model grid {:?}",
                    g.dims, self.grid
                )));
            }
            flat.extend(g.tokens.iter().copied());
            coords.push(g.coords);
        }
        let n = self.grid.num_tokens();
        let raw = self.cfg.patch.raw_dim();
        let t = Tensor::from_vec(flat, (clips.len(), n, raw), &dev)?;
        Ok((t, CoordBatch::new(&coords, self.grid, &dev)?))
    }

    /// Full-view patch features `[B, N, D]`.
    pub fn patch_features(&self, clips: &[&VideoClip]) -> Result<Tensor> {
        let (t, cb) = self.tokens(clips)?;
        self.student()?.forward(&t, &cb)
    }

    /// Mean-pooled full-view features, one row per clip.
    pub fn embed(&self, clips: &[VideoClip]) -> Result<Array2<f32>> {
        let student = self.student()?;
        let d = self.cfg.model.embed_dim;
        let mut out = Array2::<f32>::zeros((clips.len(), d));
        for (chunk_i, chunk) in clips.chunks(64).enumerate() {
            let refs: Vec<&VideoClip> = chunk.iter().collect();
            let (t, cb) = self.tokens(&refs)?;
            let pooled = student.forward(&t, &cb)?.mean(1)?.to_vec2::<f32>()?;
            for (r, row) in pooled.into_iter().enumerate() {
                for (c, v) in row.into_iter().enumerate() {
                    out[[chunk_i * 64 + r, c]] = v;
                }
            }
        }
        Ok(out)
    }
}
