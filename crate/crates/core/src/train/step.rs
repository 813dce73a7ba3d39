use candle_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lr_at;
use super::state::TrainState;
use crate::action_area::ActionArea;
use crate::config::Objective;
use crate::ema::{ema_update_prefixed, tau_at};
use crate::error::FilsError;
use crate::losses::{actclip_loss, fp_loss, mse_pixel_loss, sigma_of, total_loss, LossWeights};
use crate::model::{pool_action_features_batch, project_and_normalize, CoordBatch, TeacherInput, STUDENT, TEACHER};
use crate::tokenize::{sample_tube_mask, split_tokens, TokenCoord, TokenGrid};
use crate::train::clip_grad_norm;
use crate::util::mix_seed;
use crate::Result;

const MASK_STREAM: u64 = 0x6d61_736b;
const POOL_STREAM: u64 = 0x706f_6f6c;

/// One training sample: its token grid, detected action area and caption.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub grid: TokenGrid,
    pub area: ActionArea,
    pub caption: String,
    /// Seed of the source clip, reported when a step fails.
    pub clip_seed: u64,
}

pub type Batch = [BatchItem];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    /// 1-based index of the completed update.
    pub step: u64,
    pub epoch: u64,
    pub loss: f64,
    pub actclip: Option<f64>,
    pub fp: Option<f64>,
    pub mse: Option<f64>,
    pub tau: f64,
    pub lr: f64,
    pub sigma: f64,
    pub grad_norm: f64,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

fn stack_rows(rows: &[ndarray::Array2<f32>], dev: &candle_core::Device) -> Result<Tensor> {
    let (n, d) = rows[0].dim();
    let mut flat = Vec::with_capacity(rows.len() * n * d);
    for r in rows {
        if r.dim() != (n, d) {
            return Err(FilsError::Shape("ragged token batch".into()));
        }
        flat.extend(r.iter().copied());
    }
    Ok(Tensor::from_vec(flat, (rows.len(), n, d), dev)?)
}

/// One optimizer step: mask, predict masked features against the EMA teacher,
/// contrast action-area features with captions, backprop, AdamW, then EMA.
pub fn pretrain_step(state: &mut TrainState, batch: &Batch) -> Result<StepMetrics> {
    let cfg = state.cfg.clone();
    let objective = cfg.train.objective;
    let b = batch.len();
    if b == 0 {
        return Err(FilsError::InvalidArgument("empty batch".into()));
    }
    if objective.uses_actclip() && b < 2 {
        return Err(FilsError::InvalidArgument(
            "contrastive step needs at least two samples".into(),
        ));
    }
    let dims = state.grid;
    if let Some(item) = batch.iter().find(|i| i.grid.dims != dims) {
        return Err(FilsError::Shape(format!(
            "clip grid {:?} does not match the model grid {dims:?}",
            item.grid.dims
        )));
    }
    let dev = state.device.clone();
    let step = state.step;
    let n = dims.num_tokens();

    let full_coords: Vec<Vec<TokenCoord>> = batch.iter().map(|i| i.grid.coords.clone()).collect();
    let full_cb = CoordBatch::new(&full_coords, dims, &dev)?;
    let full_tokens = || -> Result<Tensor> {
        let rows: Vec<_> = batch.iter().map(|i| i.grid.tokens.clone()).collect();
        stack_rows(&rows, &dev)
    };

    let student = state.student()?;
    let projection = state.projection()?;
    let mut l_fp = None;
    let mut l_mse = None;
    let mut l_act = None;

    if objective.uses_fp() || objective == Objective::MseBaseline {
        let mut vis_rows = Vec::with_capacity(b);
        let mut vis_coords = Vec::with_capacity(b);
        let mut masked_coords = Vec::with_capacity(b);
        let mut masked_global = Vec::new();
        let mut masked_rows = Vec::with_capacity(b);
        for (s, item) in batch.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(cfg.seed ^ MASK_STREAM, step), s as u64));
            let mask = sample_tube_mask(dims, cfg.mask.ratio, &mut rng)?;
            let split = split_tokens(&item.grid, &mask)?;
            masked_global.extend(split.masked_index.iter().map(|&i| (s * n + i) as u32));
            masked_rows.push(item.grid.tokens.select(ndarray::Axis(0), &split.masked_index));
            vis_rows.push(split.visible);
            vis_coords.push(split.visible_coords);
            masked_coords.push(split.masked_coords);
        }
        let vis_cb = CoordBatch::new(&vis_coords, dims, &dev)?;
        let mask_cb = CoordBatch::new(&masked_coords, dims, &dev)?;
        let n_m = mask_cb.len;
        let f_u = student.forward(&stack_rows(&vis_rows, &dev)?, &vis_cb)?;
        let p = state.predictor()?.forward(&f_u, &vis_cb, &mask_cb)?;
        if objective == Objective::MseBaseline {
            l_mse = Some(mse_pixel_loss(&p, &stack_rows(&masked_rows, &dev)?)?);
        } else {
            let teacher = state.teacher_encoder()?;
            let d = cfg.model.embed_dim;
            let g = match cfg.model.teacher_input {
                TeacherInput::Full => {
                    let all = teacher.forward(&full_tokens()?, &full_cb)?.reshape((b * n, d))?;
                    let idx = Tensor::from_vec(masked_global, b * n_m, &dev)?;
                    all.index_select(&idx, 0)?
                }
                TeacherInput::MaskedOnly => teacher
                    .forward(&stack_rows(&masked_rows, &dev)?, &mask_cb)?
                    .reshape((b * n_m, d))?,
            }
            .detach();
            let p_tilde = project_and_normalize(Some(&projection), &p.reshape((b * n_m, d))?)?;
            let g_tilde = project_and_normalize(Some(&projection), &g)?.detach();
            l_fp = Some(fp_loss(&p_tilde, &g_tilde)?);
        }
    }

    if objective.uses_actclip() {
        let feats = student.forward(&full_tokens()?, &full_cb)?;
        let areas: Vec<ActionArea> = batch.iter().map(|i| i.area.clone()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed ^ POOL_STREAM, step));
        let pooled = pool_action_features_batch(&feats, dims, &areas, cfg.model.pool_strategy, &mut rng)?;
        let zv = project_and_normalize(Some(&projection), &pooled)?;
        let captions: Vec<&str> = batch.iter().map(|i| i.caption.as_str()).collect();
        let zt = state.text_targets(&captions)?;
        l_act = Some(actclip_loss(&zv, &zt, &state.log_sigma()?, cfg.sigma_clamp())?);
    }

    let single = LossWeights {
        lambda1: 1.0,
        lambda2: 1.0,
    };
    let total = match objective {
        Objective::Fils => total_loss(l_act.as_ref(), l_fp.as_ref(), &cfg.loss_weights()),
        Objective::FpOnly => total_loss(None, l_fp.as_ref(), &single),
        Objective::ActclipOnly => total_loss(l_act.as_ref(), None, &single),
        Objective::MseBaseline => total_loss(None, l_mse.as_ref(), &single),
    }
    .map_err(|e| match e {
        FilsError::NonFinite(m) => {
            let seeds: Vec<u64> = batch.iter().map(|i| i.clip_seed).collect();
            FilsError::NonFinite(format!("{m} at step {step}; clip seeds {seeds:?}"))
        }
        other => other,
    })?;

    let mut grads = total.backward()?;
    let grad_norm = clip_grad_norm(&state.params, &mut grads, cfg.optim.grad_clip)?;
    let lr = lr_at(step, &cfg.lr_schedule());
    state.opt.step(&state.params, &grads, lr)?;
    let tau = tau_at(step, &cfg.ema_schedule());
    ema_update_prefixed(&state.teacher, TEACHER, &state.params, STUDENT, tau)?;
    state.step += 1;

    let opt = |t: &Option<Tensor>| t.as_ref().map(scalar).transpose();
    Ok(StepMetrics {
        step: state.step,
        epoch: (state.step - 1) / cfg.steps_per_epoch().max(1),
        loss: scalar(&total)?,
        actclip: opt(&l_act)?,
        fp: opt(&l_fp)?,
        mse: opt(&l_mse)?,
        tau,
        lr,
        sigma: scalar(&sigma_of(&state.log_sigma()?, cfg.sigma_clamp())?)?,
        grad_norm,
    })
}
