use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use candle_core::{DType, Device, Tensor, D};
use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FilsModel;
use crate::config::ProbeConfig;
use crate::error::FilsError;
use crate::model::params::{init_tensors, to_vars, Init, ParamSpec};
use crate::model::{VideoEncoder, STUDENT};
use crate::synthgen::{load_split, Motion, Split, VideoClip};
use crate::train::AdamW;
use crate::util::mix_seed;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeMode {
    /// Frozen encoder, linear head on whitened pooled features.
    LinearProbe,
    /// Encoder and head trained jointly.
    Finetune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub top1: f64,
    /// Validation accuracy per class present in the validation split.
    pub per_class: BTreeMap<usize, f64>,
    pub class_counts: BTreeMap<usize, usize>,
    pub seed: u64,
    pub checkpoint: String,
    pub mode: ProbeMode,
    pub train_count: usize,
    pub val_count: usize,
}

impl ProbeResult {
    pub fn table(&self) -> String {
        let mut s = format!(
            "probe {:?} on {} (seed {})\n{:<8} {:<8} {:>6} {:>8}\n",
            self.mode, self.checkpoint, self.seed, "class", "name", "count", "acc"
        );
        for (c, acc) in &self.per_class {
            let name = Motion::from_label(*c).map_or("?", |m| m.name());
            s += &format!("{c:<8} {name:<8} {:>6} {:>8.4}\n", self.class_counts[c], acc);
        }
        s += &format!("top-1 {:.4} over {} clips\n", self.top1, self.val_count);
        s
    }
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    if let Some(l) = labels.iter().find(|&&l| l >= classes) {
        return Err(FilsError::InvalidArgument(format!(
            "label {l} outside the head's {classes} classes"
        )));
    }
    Ok(())
}

/// Cross-entropy against `(1 − ε)·onehot + ε/C`.
fn smoothed_cross_entropy(logits: &Tensor, labels: &[usize], eps: f64) -> Result<Tensor> {
    let (b, c) = logits.dims2()?;
    let mut q = vec![eps / c as f64; b * c];
    for (i, &l) in labels.iter().enumerate() {
        q[i * c + l] += 1.0 - eps;
    }
    let q = Tensor::from_vec(q, (b, c), logits.device())?.to_dtype(logits.dtype())?;
    let shifted = logits.broadcast_sub(&logits.max_keepdim(D::Minus1)?.detach())?;
    let log_z = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    let log_p = shifted.broadcast_sub(&log_z)?;
    Ok((q * log_p)?.sum(D::Minus1)?.mean(0)?.neg()?)
}

fn score(
    pred: &[usize],
    labels: &[usize],
    seed: u64,
    checkpoint: String,
    mode: ProbeMode,
    train_count: usize,
) -> ProbeResult {
    let mut counts = BTreeMap::new();
    let mut correct = BTreeMap::new();
    for (&p, &l) in pred.iter().zip(labels) {
        *counts.entry(l).or_insert(0usize) += 1;
        *correct.entry(l).or_insert(0usize) += (p == l) as usize;
    }
    let per_class = counts
        .iter()
        .map(|(&c, &n)| (c, correct[&c] as f64 / n as f64))
        .collect();
    let hits: usize = correct.values().sum();
    ProbeResult {
        top1: hits as f64 / labels.len().max(1) as f64,
        per_class,
        class_counts: counts,
        seed,
        checkpoint,
        mode,
        train_count,
        val_count: labels.len(),
    }
}

fn head_specs(d: usize, classes: usize) -> Vec<ParamSpec> {
    vec![
        // zero start: every class begins tied, so the first steps only move
        // toward the labels
        ParamSpec::new("head.w", &[classes, d], Init::Zeros, true),
        ParamSpec::new("head.b", &[classes], Init::Zeros, false),
    ]
}

fn argmax_rows(logits: &Tensor) -> Result<Vec<usize>> {
    Ok(logits
        .argmax(D::Minus1)?
        .to_vec1::<u32>()?
        .into_iter()
        .map(|v| v as usize)
        .collect())
}

fn to_tensor(x: &Array2<f32>, dev: &Device) -> Result<Tensor> {
    let (n, d) = x.dim();
    Ok(Tensor::from_vec(x.iter().copied().collect::<Vec<_>>(), (n, d), dev)?)
}

/// Eigenvalue floor relative to the largest covariance eigenvalue.
const WHITEN_EPS: f64 = 1e-6;

/// ZCA whitening fitted on the training split. Pooled features after the final
/// layer norm are strongly correlated, and a fixed-budget optimizer on raw or
/// per-dimension standardized features stops far from the optimum.
struct Whitening {
    mean: Array1<f64>,
    /// `[D, D]`, symmetric.
    w: Array2<f64>,
}

impl Whitening {
    fn fit(x: &Array2<f32>) -> Self {
        let (n, d) = x.dim();
        let x = x.mapv(f64::from);
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let c = &x - &mean;
        let cov = c.t().dot(&c) / n as f64;
        let eig = nalgebra::SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
        let top = eig.eigenvalues.max().max(0.0);
        let floor = WHITEN_EPS * top + f64::MIN_POSITIVE;
        let scale = eig.eigenvalues.map(|l| (l.max(0.0) + floor).powf(-0.5));
        let w = &eig.eigenvectors * DMatrix::from_diagonal(&scale) * eig.eigenvectors.transpose();
        Whitening {
            mean,
            w: Array2::from_shape_fn((d, d), |(i, j)| w[(i, j)]),
        }
    }

    fn apply(&self, x: &Array2<f32>) -> Array2<f32> {
        ((x.mapv(f64::from) - &self.mean).dot(&self.w)).mapv(|v| v as f32)
    }
}

/// Linear classifier on fixed features, whitened with training-split
/// statistics. This is the linear-probe path with the encoder factored out.
#[allow(clippy::too_many_arguments)]
pub fn probe_features(
    train_x: &Array2<f32>,
    train_y: &[usize],
    val_x: &Array2<f32>,
    val_y: &[usize],
    num_classes: usize,
    pc: &ProbeConfig,
    seed: u64,
    checkpoint: &str,
) -> Result<ProbeResult> {
    check_labels(train_y, num_classes)?;
    check_labels(val_y, num_classes)?;
    let (n, d) = train_x.dim();
    if n == 0 || n != train_y.len() || val_x.dim().0 != val_y.len() || val_x.dim().1 != d {
        return Err(FilsError::Shape("probe features and labels disagree".into()));
    }
    let dev = Device::Cpu;
    let white = Whitening::fit(train_x);
    let xt = to_tensor(&white.apply(train_x), &dev)?;
    let xv = to_tensor(&white.apply(val_x), &dev)?;

    let specs = head_specs(d, num_classes);
    let params = to_vars(&init_tensors(&specs, seed, DType::F32, &dev)?)?;
    let decay: BTreeSet<String> = BTreeSet::from(["head.w".to_string()]);
    let mut opt = AdamW::new(0.9, 0.95, 1e-8, pc.weight_decay, decay);
    let head = |x: &Tensor| -> Result<Tensor> {
        Ok(x.matmul(&params["head.w"].as_tensor().t()?)?
            .broadcast_add(params["head.b"].as_tensor())?)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x7072_6f62));
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..pc.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(pc.batch_size) {
            let idx = Tensor::from_vec(chunk.iter().map(|&i| i as u32).collect::<Vec<_>>(), chunk.len(), &dev)?;
            let labels: Vec<usize> = chunk.iter().map(|&i| train_y[i]).collect();
            let loss = smoothed_cross_entropy(&head(&xt.index_select(&idx, 0)?)?, &labels, pc.label_smoothing)?;
            opt.step(&params, &loss.backward()?, pc.lr)?;
        }
    }
    let pred = argmax_rows(&head(&xv)?)?;
    Ok(score(
        &pred,
        val_y,
        seed,
        checkpoint.to_string(),
        ProbeMode::LinearProbe,
        n,
    ))
}

fn finetune(
    model: &FilsModel,
    train: &[VideoClip],
    val: &[VideoClip],
    num_classes: usize,
    pc: &ProbeConfig,
    seed: u64,
) -> Result<ProbeResult> {
    let dev = model.device();
    let enc_cfg = model.cfg.encoder_config()?;
    let d = model.cfg.model.embed_dim;
    let mut tensors: BTreeMap<String, Tensor> = model
        .tensors
        .iter()
        .filter(|(k, _)| k.starts_with(&format!("{STUDENT}.")))
        .map(|(k, t)| (k.clone(), t.clone()))
        .collect();
    tensors.extend(init_tensors(&head_specs(d, num_classes), seed, DType::F32, &dev)?);
    let params = to_vars(&tensors)?;
    let specs = VideoEncoder::specs(STUDENT, &enc_cfg);
    let mut decay: BTreeSet<String> = specs.iter().filter(|s| s.decay).map(|s| s.name.clone()).collect();
    decay.insert("head.w".into());
    let mut opt = AdamW::new(0.9, 0.95, 1e-8, pc.weight_decay, decay);
    let forward = |clips: &[&VideoClip]| -> Result<Tensor> {
        let enc = VideoEncoder::load(&params, STUDENT, &enc_cfg)?;
        let (t, cb) = model.tokens(clips)?;
        let f = enc.forward(&t, &cb)?.mean(1)?;
        Ok(f.matmul(&params["head.w"].as_tensor().t()?)?
            .broadcast_add(params["head.b"].as_tensor())?)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x6669_6e65));
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..pc.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(pc.batch_size) {
            let clips: Vec<&VideoClip> = chunk.iter().map(|&i| &train[i]).collect();
            let labels: Vec<usize> = clips.iter().map(|c| c.action_label).collect();
            let loss = smoothed_cross_entropy(&forward(&clips)?, &labels, pc.label_smoothing)?;
            opt.step(&params, &loss.backward()?, pc.lr)?;
        }
    }
    let mut pred = Vec::with_capacity(val.len());
    for chunk in val.chunks(64) {
        let clips: Vec<&VideoClip> = chunk.iter().collect();
        pred.extend(argmax_rows(&forward(&clips)?.detach())?);
    }
    let labels: Vec<usize> = val.iter().map(|c| c.action_label).collect();
    Ok(score(
        &pred,
        &labels,
        seed,
        model.id.clone(),
        ProbeMode::Finetune,
        train.len(),
    ))
}

/// Train a classifier on `train` and report top-1 on `val`.
pub fn probe(
    model: &FilsModel,
    train: &[VideoClip],
    val: &[VideoClip],
    mode: ProbeMode,
    seed: u64,
) -> Result<ProbeResult> {
    let classes = Motion::NUM_CLASSES;
    let ty: Vec<usize> = train.iter().map(|c| c.action_label).collect();
    let vy: Vec<usize> = val.iter().map(|c| c.action_label).collect();
    check_labels(&ty, classes)?;
    check_labels(&vy, classes)?;
    if train.is_empty() || val.is_empty() {
        return Err(FilsError::InvalidArgument(
            "probe needs non-empty train and val splits".into(),
        ));
    }
    let pc = model.cfg.probe;
    match mode {
        ProbeMode::LinearProbe => {
            let tx = model.embed(train)?;
            let vx = model.embed(val)?;
            probe_features(&tx, &ty, &vx, &vy, classes, &pc, seed, &model.id)
        }
        ProbeMode::Finetune => finetune(model, train, val, classes, &pc, seed),
    }
}

/// Probe a checkpoint on the train/val splits stored under `data`.
pub fn probe_dataset(model: &FilsModel, data: &Path, mode: ProbeMode, seed: u64) -> Result<ProbeResult> {
    let (tm, train) = load_split(data, Split::Train)?;
    let (vm, val) = load_split(data, Split::Val)?;
    for m in [&tm, &vm] {
        if m.num_classes != Motion::NUM_CLASSES {
            return Err(FilsError::InvalidArgument(format!(
                "dataset has {} classes, the probe head has {}",
                m.num_classes,
                Motion::NUM_CLASSES
            )));
        }
    }
    probe(model, &train, &val, mode, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pc() -> ProbeConfig {
        ProbeConfig {
            epochs: 20,
            lr: 1e-3,
            batch_size: 16,
            label_smoothing: 0.1,
            weight_decay: 0.05,
        }
    }

    fn one_hot(labels: &[usize], d: usize) -> Array2<f32> {
        Array2::from_shape_fn((labels.len(), d), |(i, j)| (labels[i] == j) as u8 as f32)
    }

    #[test]
    fn oracle_features_are_perfectly_separable() {
        let ty: Vec<usize> = (0..160).map(|i| i % 8).collect();
        let vy: Vec<usize> = (0..40).map(|i| (i * 3) % 8).collect();
        let r = probe_features(&one_hot(&ty, 8), &ty, &one_hot(&vy, 8), &vy, 8, &pc(), 1, "oracle").unwrap();
        assert_eq!(r.top1, 1.0);
        assert!(r.per_class.values().all(|&a| a == 1.0));
    }

    #[test]
    fn bookkeeping_is_consistent() {
        let r = score(
            &[0, 1, 1, 2, 2, 2],
            &[0, 1, 2, 2, 2, 0],
            0,
            "x".into(),
            ProbeMode::LinearProbe,
            6,
        );
        assert!((0.0..=1.0).contains(&r.top1));
        let weighted: f64 = r
            .per_class
            .iter()
            .map(|(c, a)| a * r.class_counts[c] as f64)
            .sum::<f64>()
            / r.val_count as f64;
        assert!((weighted - r.top1).abs() < 1e-12);
        assert_eq!(r.top1, 4.0 / 6.0);
        assert!(r.table().contains("top-1"));
    }

    #[test]
    fn out_of_range_labels_are_rejected() {
        let x = one_hot(&[0, 1], 8);
        assert!(probe_features(&x, &[0, 9], &x, &[0, 1], 8, &pc(), 0, "x").is_err());
    }

    #[test]
    fn label_smoothing_matches_a_direct_computation() {
        let logits = Tensor::new(&[[2.0f64, 0.0, -1.0]], &Device::Cpu).unwrap();
        let l = smoothed_cross_entropy(&logits, &[0], 0.1)
            .unwrap()
            .to_scalar::<f64>()
            .unwrap();
        let z: f64 = [2.0f64, 0.0, -1.0].iter().map(|v| v.exp()).sum();
        let lp: Vec<f64> = [2.0f64, 0.0, -1.0].iter().map(|v| v - z.ln()).collect();
        let q = [0.9 + 0.1 / 3.0, 0.1 / 3.0, 0.1 / 3.0];
        let expect = -(0..3).map(|i| q[i] * lp[i]).sum::<f64>();
        assert!((l - expect).abs() < 1e-12);
    }

    #[test]
    fn whitening_gives_identity_covariance() {
        let x = Array2::from_shape_fn((200, 3), |(i, j)| {
            let a = ((i * 7919) % 101) as f32 / 101.0;
            let b = ((i * 104_729) % 97) as f32 / 97.0;
            let c = ((i * 31) % 13) as f32 / 13.0;
            [a + b, a - 0.5 * b + c, 3.0 * c][j]
        });
        let w = Whitening::fit(&x);
        let z = w.apply(&x).mapv(f64::from);
        let cov = z.t().dot(&z) / 200.0;
        for i in 0..3 {
            for j in 0..3 {
                let want = (i == j) as u8 as f64;
                assert!((cov[[i, j]] - want).abs() < 1e-4, "cov[{i},{j}] = {}", cov[[i, j]]);
            }
        }
        assert!(z.mean_axis(Axis(0)).unwrap().iter().all(|m| m.abs() < 1e-5));
    }

    #[test]
    fn rank_deficient_features_stay_finite() {
        let x = Array2::from_shape_fn((50, 4), |(i, j)| if j < 2 { (i % 5) as f32 } else { 1.0 });
        assert!(Whitening::fit(&x).apply(&x).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn probe_is_deterministic() {
        let ty: Vec<usize> = (0..64).map(|i| i % 8).collect();
        let mut x = Array2::<f32>::zeros((64, 4));
        for (i, &l) in ty.iter().enumerate() {
            x[[i, l % 4]] = 1.0 + (i % 3) as f32 * 0.1;
        }
        let a = probe_features(&x, &ty, &x, &ty, 8, &pc(), 5, "x").unwrap();
        let b = probe_features(&x, &ty, &x, &ty, 8, &pc(), 5, "x").unwrap();
        assert_eq!(a, b);
    }
}
