use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use candle_core::{DType, Device, Tensor, Var};

use super::checkpoint::Checkpoint;
use super::optim::AdamW;
use crate::config::{FilsConfig, Objective};
use crate::error::FilsError;
use crate::model::params::{check_shapes, init_tensors, to_vars, Detached, ParamSpec};
use crate::model::{
    l2_normalize, EncoderConfig, ModelLayout, Predictor, ProjectionHead, TextEncoder, VideoEncoder, Vocab, LOG_SIGMA,
    PREDICTOR, PROJECTION, STUDENT, TEACHER, TEXT,
};
use crate::tokenize::GridDims;
use crate::Result;

pub(crate) const DTYPE: DType = DType::F32;

/// θ (student, predictor, projection, log σ), Δ (teacher), the frozen text
/// encoder and optimizer moments.
pub struct TrainState {
    pub cfg: FilsConfig,
    pub encoder: EncoderConfig,
    pub grid: GridDims,
    pub vocab: Vocab,
    pub params: BTreeMap<String, Var>,
    pub teacher: BTreeMap<String, Var>,
    pub text: BTreeMap<String, Tensor>,
    pub opt: AdamW,
    /// Completed optimizer steps.
    pub step: u64,
    pub device: Device,
    text_cache: RefCell<HashMap<String, Tensor>>,
}

pub(crate) fn predictor_out(cfg: &FilsConfig) -> usize {
    match cfg.train.objective {
        Objective::MseBaseline => cfg.patch.raw_dim(),
        _ => cfg.model.embed_dim,
    }
}

pub(crate) fn layout(cfg: &FilsConfig, vocab: Vocab) -> Result<ModelLayout> {
    Ok(ModelLayout {
        encoder: cfg.encoder_config()?,
        model: cfg.model.clone(),
        predictor_out: predictor_out(cfg),
        vocab,
    })
}

impl TrainState {
    /// Fresh state from the config seed. The teacher starts as a copy of the
    /// student.
    pub fn new(cfg: &FilsConfig) -> Result<Self> {
        cfg.validate()?;
        let device = Device::Cpu;
        let lay = layout(cfg, Vocab::captions())?;
        let specs = lay.trainable_specs(cfg.loss.sigma_init);
        let init = init_tensors(&specs, cfg.seed, DTYPE, &device)?;
        let mut teacher = BTreeMap::new();
        for (k, t) in &init {
            if let Some(rest) = k.strip_prefix(STUDENT) {
                teacher.insert(format!("{TEACHER}{rest}"), t.copy()?);
            }
        }
        let text = init_tensors(&lay.text_specs(), cfg.seed, DTYPE, &device)?;
        Self::assemble(cfg.clone(), lay, init, teacher, text, 0, &device)
    }

    fn assemble(
        cfg: FilsConfig,
        lay: ModelLayout,
        params: BTreeMap<String, Tensor>,
        teacher: BTreeMap<String, Tensor>,
        text: BTreeMap<String, Tensor>,
        step: u64,
        device: &Device,
    ) -> Result<Self> {
        let specs = lay.trainable_specs(cfg.loss.sigma_init);
        check_shapes(&specs, &params)?;
        check_shapes(&lay.teacher_specs(), &teacher)?;
        check_shapes(&lay.text_specs(), &text)?;
        if params.len() != specs.len() {
            return Err(FilsError::Shape(format!(
                "expected {} trainable tensors, found {}",
                specs.len(),
                params.len()
            )));
        }
        let decay: BTreeSet<String> = specs
            .iter()
            .filter(|s: &&ParamSpec| s.decay)
            .map(|s| s.name.clone())
            .collect();
        let o = &cfg.optim;
        let opt = AdamW::new(o.beta1, o.beta2, o.eps, o.weight_decay, decay);
        Ok(TrainState {
            encoder: lay.encoder,
            grid: cfg.grid()?,
            vocab: lay.vocab,
            params: to_vars(&params)?,
            teacher: to_vars(&teacher)?,
            text,
            opt,
            step,
            device: device.clone(),
            text_cache: RefCell::new(HashMap::new()),
            cfg,
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let device = Device::Cpu;
        let lay = layout(&ck.config, ck.vocab.clone())?;
        let mut params = BTreeMap::new();
        let mut teacher = BTreeMap::new();
        let mut text = BTreeMap::new();
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (k, t) in ck.tensors {
            let t = t.to_dtype(DTYPE)?;
            if let Some(rest) = k.strip_prefix("opt.m.") {
                m.insert(rest.to_string(), t);
            } else if let Some(rest) = k.strip_prefix("opt.v.") {
                v.insert(rest.to_string(), t);
            } else if k.starts_with(&format!("{TEACHER}.")) {
                teacher.insert(k, t);
            } else if k.starts_with(&format!("{TEXT}.")) {
                text.insert(k, t);
            } else {
                params.insert(k, t);
            }
        }
        let mut state = Self::assemble(ck.config, lay, params, teacher, text, ck.step, &device)?;
        state.opt.m = m;
        state.opt.v = v;
        state.opt.t = ck.adam_t;
        Ok(state)
    }

    pub fn epoch(&self) -> u64 {
        self.step / self.cfg.steps_per_epoch().max(1)
    }

    /// Student encoder over tracked parameters.
    pub fn student(&self) -> Result<VideoEncoder> {
        VideoEncoder::load(&self.params, STUDENT, &self.encoder)
    }

    /// Teacher encoder over untracked views of Δ.
    pub fn teacher_encoder(&self) -> Result<VideoEncoder> {
        VideoEncoder::load(&Detached(&self.teacher), TEACHER, &self.encoder)
    }

    pub fn predictor(&self) -> Result<Predictor> {
        Predictor::load(
            &self.params,
            PREDICTOR,
            self.cfg.model.predictor_depth,
            self.cfg.model.heads,
        )
    }

    pub fn projection(&self) -> Result<ProjectionHead> {
        ProjectionHead::load(&self.params, PROJECTION, self.cfg.model.projection)
    }

    pub fn text_encoder(&self) -> Result<TextEncoder> {
        TextEncoder::load(&self.text, TEXT, &self.cfg.model, self.vocab.clone(), true)
    }

    pub fn log_sigma(&self) -> Result<Tensor> {
        Ok(self.params[LOG_SIGMA].as_tensor().clone())
    }

    /// `z^T = h / ‖h‖` for each caption, `[B, D_text]`. The encoder is
    /// frozen, so embeddings are cached per caption.
    pub fn text_targets(&self, captions: &[&str]) -> Result<Tensor> {
        let enc = self.text_encoder()?;
        let mut cache = self.text_cache.borrow_mut();
        let mut rows = Vec::with_capacity(captions.len());
        for c in captions {
            if let Some(z) = cache.get(*c) {
                rows.push(z.clone());
                continue;
            }
            let h = enc.encode(c)?;
            let z = l2_normalize(&h.unsqueeze(0)?)?.squeeze(0)?.detach();
            cache.insert(c.to_string(), z.clone());
            rows.push(z);
        }
        Ok(Tensor::stack(&rows, 0)?)
    }
}
