use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{Device, Tensor};
use safetensors::SafeTensors;

use super::state::TrainState;
use crate::config::FilsConfig;
use crate::error::FilsError;
use crate::model::Vocab;
use crate::Result;

pub const CHECKPOINT_FORMAT: &str = "fils-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const CHECKPOINT_FILE: &str = "checkpoint.safetensors";

/// Decoded checkpoint: every tensor by name plus the metadata header.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: FilsConfig,
    pub step: u64,
    pub vocab: Vocab,
    pub tensors: BTreeMap<String, Tensor>,
    pub adam_t: BTreeMap<String, u64>,
}

/// Write the full training state as safetensors. Written to a temporary
/// file first and renamed, so an interrupted save never leaves a torn file.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
    for (k, v) in state.params.iter().chain(state.teacher.iter()) {
        tensors.insert(k.clone(), v.as_tensor().detach());
    }
    for (k, t) in &state.text {
        tensors.insert(k.clone(), t.clone());
    }
    for (k, t) in &state.opt.m {
        tensors.insert(format!("opt.m.{k}"), t.clone());
    }
    for (k, t) in &state.opt.v {
        tensors.insert(format!("opt.v.{k}"), t.clone());
    }
    let meta = HashMap::from([
        ("format".to_string(), CHECKPOINT_FORMAT.to_string()),
        ("version".to_string(), CHECKPOINT_VERSION.to_string()),
        ("config".to_string(), serde_json::to_string(&state.cfg)?),
        ("step".to_string(), state.step.to_string()),
        ("epoch".to_string(), state.epoch().to_string()),
        ("objective".to_string(), state.cfg.train.objective.name().to_string()),
        ("vocab".to_string(), serde_json::to_string(&state.vocab)?),
        ("adam_t".to_string(), serde_json::to_string(&state.opt.t)?),
    ]);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| FilsError::io(dir, e))?;
    }
    let tmp = path.with_extension("safetensors.tmp");
    safetensors::serialize_to_file(tensors.iter(), Some(meta), &tmp)
        .map_err(|e| FilsError::format(&tmp, e.to_string()))?;
    std::fs::rename(&tmp, path).map_err(|e| FilsError::io(path, e))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| FilsError::io(path, e))?;
    let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| FilsError::format(path, e.to_string()))?;
    let meta = header
        .metadata()
        .clone()
        .ok_or_else(|| FilsError::format(path, "missing metadata header"))?;
    let field = |k: &str| {
        meta.get(k)
            .cloned()
            .ok_or_else(|| FilsError::format(path, format!("metadata lacks {k:?}")))
    };
    if field("format")? != CHECKPOINT_FORMAT {
        return Err(FilsError::format(path, "not a fils checkpoint"));
    }
    let version: u32 = field("version")?
        .parse()
        .map_err(|_| FilsError::format(path, "bad version"))?;
    if version != CHECKPOINT_VERSION {
        return Err(FilsError::format(
            path,
            format!("checkpoint version {version}, this build reads {CHECKPOINT_VERSION}"),
        ));
    }
    let parse_err = |k: &str, e: serde_json::Error| FilsError::format(path, format!("{k}: {e}"));
    let config: FilsConfig = serde_json::from_str(&field("config")?).map_err(|e| parse_err("config", e))?;
    config.validate()?;
    let step: u64 = field("step")?
        .parse()
        .map_err(|_| FilsError::format(path, "bad step"))?;
    let vocab: Vocab = serde_json::from_str(&field("vocab")?).map_err(|e| parse_err("vocab", e))?;
    let adam_t = serde_json::from_str(&field("adam_t")?).map_err(|e| parse_err("adam_t", e))?;
    let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)?
        .into_iter()
        .collect();
    Ok(Checkpoint {
        config,
        step,
        vocab,
        tensors,
        adam_t,
    })
}
