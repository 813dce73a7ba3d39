//! Fast invariant suite behind `fils selftest`.

use candle_core::{Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::action_area::{action_area_for_clip, object_patches, ActionAreaParams};
use crate::config::FilsConfig;
use crate::ema::{tau_at, EmaSchedule};
use crate::losses::actclip_loss;
use crate::synthgen::{render_clip, render_split, Color, Motion, SceneSpec, ShapeKind, Split};
use crate::tokenize::{masked_tube_count, sample_tube_mask, GridDims};
use crate::train::{pretrain_step, TrainState, TrainingData};
use crate::Result;

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    match f() {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn geometry() -> Result<(bool, String)> {
    let toy = FilsConfig::toy().grid()?.num_tokens();
    let large = FilsConfig::large().grid()?.num_tokens();
    Ok((toy == 512 && large == 1568, format!("toy {toy}, large {large}")))
}

fn masks() -> Result<(bool, String)> {
    let dims = GridDims::new(8, 14, 14);
    let want = masked_tube_count(dims, 0.9)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..1000 {
        let m = sample_tube_mask(dims, 0.9, &mut rng)?;
        if m.masked_spatial_count() != want || m.num_masked() != want * dims.t {
            return Ok((false, format!("mask with {} tubes", m.masked_spatial_count())));
        }
    }
    Ok((want == 176, format!("1000 masks with {want} tubes each")))
}

fn losses() -> Result<(bool, String)> {
    let dev = Device::Cpu;
    let zero = Tensor::new(0.0f64, &dev)?;
    let clamp = (1e-3, 10.0);
    let one = Tensor::new(&[[0.6f64, 0.8]], &dev)?;
    let b1 = actclip_loss(&one, &one, &zero, clamp)?.to_scalar::<f64>()?;
    let eye = Tensor::new(&[[1.0f64, 0.0], [0.0, 1.0]], &dev)?;
    let b2 = actclip_loss(&eye, &eye, &zero, clamp)?.to_scalar::<f64>()?;
    let expect = (1.0 + (-1.0f64).exp()).ln();
    Ok((
        b1 == 0.0 && (b2 - expect).abs() < 1e-10,
        format!("B=1 {b1:e}, orthonormal B=2 {b2:.12}"),
    ))
}

fn ema() -> Result<(bool, String)> {
    let s = EmaSchedule {
        tau0: 0.9,
        tau_e: 1.0,
        tau_n: 10,
    };
    let ends = tau_at(0, &s) == 0.9 && tau_at(10, &s) == 1.0 && tau_at(50, &s) == 1.0;
    Ok((ends, format!("tau(0) {}, tau(10) {}", tau_at(0, &s), tau_at(10, &s))))
}

fn action_area() -> Result<(bool, String)> {
    let cfg = FilsConfig::toy();
    let spec = SceneSpec {
        shape_kind: ShapeKind::Square,
        color: Color::Red,
        motion: Motion::Right,
        speed: 2.0,
        start_pos: (16, 32),
        size: 14,
        camera_pan: (0.0, 0.0),
        pan_span: 15,
        noise_std: 0.02,
    };
    let clip = render_clip(&spec, cfg.data.geometry(), 7)?;
    let area = action_area_for_clip(&clip, cfg.patch, &ActionAreaParams::default())?;
    let truth = object_patches(&clip, cfg.patch)?;
    let hit = truth.iter().filter(|&&(y, x)| area.contains(y, x)).count();
    let recall = hit as f64 / truth.len().max(1) as f64;
    let precision = hit as f64 / area.len().max(1) as f64;
    Ok((
        recall >= 0.8 && precision >= 0.5,
        format!("recall {recall:.2}, precision {precision:.2}"),
    ))
}

fn train_step() -> Result<(bool, String)> {
    let mut cfg = FilsConfig::ci();
    cfg.data.clip_count = 4;
    cfg.train.batch_size = 4;
    let clips = render_split(&cfg.data, cfg.seed, Split::Train)?;
    let data = TrainingData::from_clips(&cfg, clips)?;
    let mut state = TrainState::new(&cfg)?;
    let batch = data.batch(&cfg, &[0, 1, 2, 3], 0)?;
    let a = pretrain_step(&mut state, &batch)?;
    let b = pretrain_step(&mut state, &batch)?;
    Ok((
        a.loss.is_finite() && b.loss.is_finite() && state.step == 2,
        format!("losses {:.4} then {:.4}", a.loss, b.loss),
    ))
}

/// Run every check; never panics on a failing check.
pub fn run() -> Vec<Check> {
    vec![
        check("token geometry", geometry),
        check("tube masks", masks),
        check("contrastive loss oracles", losses),
        check("ema schedule", ema),
        check("action area", action_area),
        check("training step", train_step),
    ]
}

#[cfg(test)]
mod tests {
    #[test]
    fn every_check_passes() {
        for c in super::run() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
