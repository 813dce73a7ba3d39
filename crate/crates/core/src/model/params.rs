//! Named parameter tables and deterministic initialization.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::FilsError;
use crate::util::{mix_seed, sha256_hex};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Normal(f64),
    /// Uniform in ±1/sqrt(fan_in), fan_in = last dimension.
    FanIn,
    Zeros,
    Ones,
    Const(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
    /// Whether AdamW weight decay applies.
    pub decay: bool,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init, decay: bool) -> Self {
        ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            init,
            decay,
        }
    }
}

fn name_stream(name: &str) -> u64 {
    let h = sha256_hex(name.as_bytes());
    u64::from_str_radix(&h[..16], 16).expect("hex digest")
}

/// Initial value for one parameter. Depends only on (seed, name, shape, init),
/// so adding parameters elsewhere never perturbs existing ones.
pub fn init_tensor(spec: &ParamSpec, seed: u64, dtype: DType, device: &Device) -> Result<Tensor> {
    let n: usize = spec.shape.iter().product();
    let values: Vec<f64> = match spec.init {
        Init::Zeros => vec![0.0; n],
        Init::Ones => vec![1.0; n],
        Init::Const(c) => vec![c; n],
        Init::Normal(std) => {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, name_stream(&spec.name)));
            let dist = Normal::new(0.0, std).map_err(|e| FilsError::Config(e.to_string()))?;
            (0..n).map(|_| dist.sample(&mut rng)).collect()
        }
        Init::FanIn => {
            let fan_in = *spec.shape.last().unwrap_or(&1) as f64;
            let bound = 1.0 / fan_in.sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, name_stream(&spec.name)));
            (0..n)
                .map(|_| rand::Rng::random_range(&mut rng, -bound..bound))
                .collect()
        }
    };
    Ok(Tensor::from_vec(values, spec.shape.as_slice(), device)?.to_dtype(dtype)?)
}

pub fn init_tensors(specs: &[ParamSpec], seed: u64, dtype: DType, device: &Device) -> Result<BTreeMap<String, Tensor>> {
    specs
        .iter()
        .map(|s| Ok((s.name.clone(), init_tensor(s, seed, dtype, device)?)))
        .collect()
}

/// Anything that can hand out named tensors to module constructors.
pub trait ParamSource {
    fn tensor(&self, name: &str) -> Result<Tensor>;
}

impl ParamSource for BTreeMap<String, Tensor> {
    fn tensor(&self, name: &str) -> Result<Tensor> {
        self.get(name)
            .cloned()
            .ok_or_else(|| FilsError::Config(format!("missing parameter {name}")))
    }
}

/// Trainable parameters: tensors handed out are tracked by autodiff.
impl ParamSource for BTreeMap<String, Var> {
    fn tensor(&self, name: &str) -> Result<Tensor> {
        self.get(name)
            .map(|v| v.as_tensor().clone())
            .ok_or_else(|| FilsError::Config(format!("missing parameter {name}")))
    }
}

/// Hands out storage-sharing but untracked views of variables.
pub struct Detached<'a>(pub &'a BTreeMap<String, Var>);

impl ParamSource for Detached<'_> {
    fn tensor(&self, name: &str) -> Result<Tensor> {
        self.0
            .get(name)
            .map(|v| v.as_detached_tensor())
            .ok_or_else(|| FilsError::Config(format!("missing parameter {name}")))
    }
}

/// Strips a prefix before delegating, so a `teacher.*` table can serve an
/// encoder built with the `student` naming.
pub struct Renamed<'a> {
    pub inner: &'a dyn ParamSource,
    pub from: &'a str,
    pub to: &'a str,
}

impl ParamSource for Renamed<'_> {
    fn tensor(&self, name: &str) -> Result<Tensor> {
        match name.strip_prefix(self.from) {
            Some(rest) => self.inner.tensor(&format!("{}{rest}", self.to)),
            None => self.inner.tensor(name),
        }
    }
}

pub fn to_vars(tensors: &BTreeMap<String, Tensor>) -> Result<BTreeMap<String, Var>> {
    tensors
        .iter()
        .map(|(k, t)| Ok((k.clone(), Var::from_tensor(t)?)))
        .collect()
}

pub fn snapshot(vars: &BTreeMap<String, Var>) -> Result<BTreeMap<String, Tensor>> {
    vars.iter()
        .map(|(k, v)| Ok((k.clone(), v.as_tensor().detach().copy()?)))
        .collect()
}

pub fn check_shapes(specs: &[ParamSpec], tensors: &BTreeMap<String, Tensor>) -> Result<()> {
    for s in specs {
        let t = tensors
            .get(&s.name)
            .ok_or_else(|| FilsError::Config(format!("missing parameter {}", s.name)))?;
        if t.dims() != s.shape.as_slice() {
            return Err(FilsError::Shape(format!(
                "parameter {} has shape {:?}, expected {:?}",
                s.name,
                t.dims(),
                s.shape
            )));
        }
    }
    Ok(())
}
