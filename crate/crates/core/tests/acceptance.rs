//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `FILS_ACCEPTANCE_SCALE=ci` (default) runs the representation criteria (7-9)
//! on the bundled ci config; `full` runs them on the toy config (3000 clips,
//! 16 x 64 x 64, 30 epochs). `FILS_ACCEPTANCE_ONLY=1,3,7` restricts the run.
//! Exits non-zero when any selected criterion fails.

use std::collections::BTreeMap;
use std::time::Instant;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fils::action_area::{action_area_for_clip, jaccard, object_patches, ActionAreaParams};
use fils::config::{FilsConfig, Objective};
use fils::ema::{ema_update, tau_at, EmaSchedule};
use fils::eval::{probe, similarity_heatmap, FilsModel, ProbeMode};
use fils::losses::{actclip_loss, fp_loss, mse_pixel_loss};
use fils::model::{project_and_normalize, CoordBatch, PoolStrategy};
use fils::synthgen::{generate_dataset, load_split, render_clip, render_split, sample_scene, Motion, Split, VideoClip};
use fils::tokenize::{masked_tube_count, sample_tube_mask, GridDims};
use fils::train::{pretrain_on, pretrain_step, TrainState, TrainingData};
use fils::Result;

/// Relative error bound of every finite-difference gradient check.
const FD_REL_TOL: f64 = 1e-3;
/// Central-difference step at f64.
const FD_STEP: f64 = 1e-6;
const SEEDS: [u64; 3] = [0, 1, 2];

#[derive(Clone, Copy, PartialEq, Eq)]
enum Scale {
    Ci,
    Full,
}

impl Scale {
    fn from_env() -> Scale {
        match std::env::var("FILS_ACCEPTANCE_SCALE").as_deref() {
            Err(_) | Ok("ci") => Scale::Ci,
            Ok("full") => Scale::Full,
            Ok(other) => panic!("FILS_ACCEPTANCE_SCALE must be ci or full, got {other:?}"),
        }
    }

    fn config(self) -> FilsConfig {
        match self {
            Scale::Ci => FilsConfig::ci(),
            Scale::Full => FilsConfig::toy(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Scale::Ci => "ci",
            Scale::Full => "full",
        }
    }
}

struct Outcome {
    id: u8,
    pass: bool,
}

/// Runs one criterion, prints its line, and folds the runtime budget into the
/// verdict.
fn criterion(id: u8, name: &str, budget_secs: Option<f64>, f: impl FnOnce() -> Result<(bool, String)>) -> Outcome {
    let t0 = Instant::now();
    let (ok, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    let secs = t0.elapsed().as_secs_f64();
    let in_time = budget_secs.map_or(true, |b| secs <= b);
    let pass = ok && in_time;
    let budget = budget_secs.map_or(String::new(), |b| format!(" (budget {b:.0}s)"));
    println!(
        "criterion {id:>2} {}: {name}: {detail}; {secs:.1}s{budget}",
        if pass { "PASS" } else { "FAIL" }
    );
    Outcome { id, pass }
}

// ---- 1. geometry -----------------------------------------------------------

fn c1_geometry() -> Result<(bool, String)> {
    let large = FilsConfig::large().grid()?.num_tokens();
    let toy = FilsConfig::toy().grid()?.num_tokens();
    Ok((
        large == 1568 && toy == 512,
        format!("large {large} tokens, toy {toy} tokens"),
    ))
}

// ---- 2. masks --------------------------------------------------------------

fn c2_masks() -> Result<(bool, String)> {
    const N: usize = 10_000;
    let dims = GridDims::new(8, 14, 14);
    let want = masked_tube_count(dims, 0.9)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut freq = vec![0usize; dims.num_spatial()];
    let mut exact = want == 176;
    let mut tubes = true;
    for _ in 0..N {
        let m = sample_tube_mask(dims, 0.9, &mut rng)?;
        exact &= m.masked_spatial_count() == want && m.num_masked() == want * dims.t;
        for y in 0..dims.y {
            for x in 0..dims.x {
                let first = m.is_masked(dims.coord(y * dims.x + x));
                tubes &= (0..dims.t).all(|t| m.is_masked(dims.coord(t * dims.num_spatial() + y * dims.x + x)) == first);
                freq[y * dims.x + x] += first as usize;
            }
        }
    }
    let p = want as f64 / dims.num_spatial() as f64;
    let sigma = (p * (1.0 - p) / N as f64).sqrt();
    let worst = freq
        .iter()
        .map(|&c| (c as f64 / N as f64 - p).abs() / sigma)
        .fold(0.0, f64::max);
    Ok((
        exact && tubes && worst <= 3.0,
        format!("{want} tubes in every mask: {exact}, constant over time: {tubes}, worst position {worst:.2} sigma"),
    ))
}

// ---- 3. loss oracles -------------------------------------------------------

fn unit_rows(rng: &mut ChaCha8Rng, b: usize, d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(b * d);
    for _ in 0..b {
        let row: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        out.extend(row.iter().map(|v| v / n));
    }
    out
}

/// Max over inputs of ‖g_fd − g_ad‖ / max(‖g_fd‖, ‖g_ad‖).
fn fd_check(inputs: &[Var], f: &dyn Fn(&[Tensor]) -> Result<Tensor>) -> Result<f64> {
    let tensors = |vars: &[Var]| vars.iter().map(|v| v.as_tensor().clone()).collect::<Vec<_>>();
    let grads = f(&tensors(inputs))?.backward()?;
    let mut worst = 0.0f64;
    for (k, var) in inputs.iter().enumerate() {
        let ad: Vec<f64> = match grads.get(var.as_tensor()) {
            Some(g) => g.flatten_all()?.to_vec1()?,
            None => vec![0.0; var.elem_count()],
        };
        let base: Vec<f64> = var.as_tensor().flatten_all()?.to_vec1()?;
        let mut fd = Vec::with_capacity(base.len());
        for i in 0..base.len() {
            let eval = |delta: f64| -> Result<f64> {
                let mut v = base.clone();
                v[i] += delta;
                let mut ts = tensors(inputs);
                ts[k] = Tensor::from_vec(v, var.shape(), &Device::Cpu)?;
                Ok(f(&ts)?.to_scalar::<f64>()?)
            };
            fd.push((eval(FD_STEP)? - eval(-FD_STEP)?) / (2.0 * FD_STEP));
        }
        let diff = fd.iter().zip(&ad).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = fd
            .iter()
            .map(|a| a * a)
            .sum::<f64>()
            .sqrt()
            .max(ad.iter().map(|a| a * a).sum::<f64>().sqrt());
        if scale > 0.0 {
            worst = worst.max(diff / scale);
        }
    }
    Ok(worst)
}

fn var(v: Vec<f64>, shape: &[usize]) -> Result<Var> {
    Ok(Var::from_tensor(&Tensor::from_vec(v, shape, &Device::Cpu)?)?)
}

fn c3_losses() -> Result<(bool, String)> {
    let dev = Device::Cpu;
    let clamp = (1e-3, 10.0);
    let zero = Tensor::new(0.0f64, &dev)?;
    let one = Tensor::new(&[[0.6f64, 0.8]], &dev)?;
    let b1 = actclip_loss(&one, &one, &zero, clamp)?.to_scalar::<f64>()?;
    let eye = Tensor::eye(2, DType::F64, &dev)?;
    let ortho = actclip_loss(&eye, &eye, &zero, clamp)?.to_scalar::<f64>()?;
    let ortho_err = (ortho - (1.0 + (-1.0f64).exp()).ln()).abs();
    let same = Tensor::new(&[[0.6f64, 0.8]; 5], &dev)?;
    let ident = actclip_loss(&same, &same, &Tensor::new(0.3f64.ln(), &dev)?, clamp)?.to_scalar::<f64>()?;
    let ident_err = (ident - 5f64.ln()).abs();

    let (b, d) = (4, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let zv = var(unit_rows(&mut rng, b, d), &[b, d])?;
    let zt = var(unit_rows(&mut rng, b, d), &[b, d])?;
    let ls = Var::from_tensor(&Tensor::new(0.2f64.ln(), &dev)?)?;
    let act = fd_check(&[zv, zt, ls], &|t| actclip_loss(&t[0], &t[1], &t[2], clamp))?;
    // the target side is a constant of fp_loss and mse_pixel_loss
    let g = Tensor::from_vec(unit_rows(&mut rng, b, d), (b, d), &dev)?;
    let p = var(unit_rows(&mut rng, b, d), &[b, d])?;
    let fp = fd_check(&[p], &|t| fp_loss(&t[0], &g))?;
    let target = Tensor::from_vec(
        (0..b * d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>(),
        (b, d),
        &dev,
    )?;
    let r = var((0..b * d).map(|_| rng.random_range(-1.0..1.0)).collect(), &[b, d])?;
    let mse = fd_check(&[r], &|t| mse_pixel_loss(&t[0], &target))?;

    let pass = b1 == 0.0
        && ortho_err <= 1e-10
        && ident_err <= 1e-10
        && act <= FD_REL_TOL
        && fp <= FD_REL_TOL
        && mse <= FD_REL_TOL;
    Ok((
        pass,
        format!(
            "B=1 {b1:e}, orthonormal err {ortho_err:.1e}, identical err {ident_err:.1e}, \
             grad rel err actclip {act:.1e} fp {fp:.1e} mse {mse:.1e}"
        ),
    ))
}

// ---- 4. EMA ----------------------------------------------------------------

fn c4_ema() -> Result<(bool, String)> {
    let dev = Device::Cpu;
    let s = EmaSchedule {
        tau0: 0.9,
        tau_e: 0.99,
        tau_n: 40,
    };
    let theta = [0.25f64, -1.5, 3.0];
    let delta0 = [1.0f64, 2.0, -0.5];
    let student = BTreeMap::from([("w".to_string(), var(theta.to_vec(), &[3])?)]);
    let teacher = BTreeMap::from([("w".to_string(), var(delta0.to_vec(), &[3])?)]);
    let mut keep = 1.0f64;
    for step in 0..100 {
        let tau = tau_at(step, &s);
        ema_update(&teacher, &student, tau)?;
        keep *= tau;
    }
    let got: Vec<f64> = teacher["w"].as_tensor().to_vec1()?;
    let mix_err = (0..3)
        .map(|i| (got[i] - (keep * delta0[i] + (1.0 - keep) * theta[i])).abs())
        .fold(0.0, f64::max);

    let d = EmaSchedule {
        tau0: 0.5,
        tau_e: 1.0,
        tau_n: 4,
    };
    let ends = tau_at(0, &d) == 0.5 && tau_at(2, &d) == 0.75 && tau_at(4, &d) == 1.0 && tau_at(9, &d) == 1.0;

    // teacher gradient probe: the FP loss built on teacher outputs must leave
    // every teacher tensor without gradient
    let mut cfg = FilsConfig::ci();
    cfg.data.clip_count = 2;
    cfg.train.batch_size = 2;
    let state = TrainState::new(&cfg)?;
    let clips = render_split(&cfg.data, cfg.seed, Split::Train)?;
    let grids: Vec<_> = clips
        .iter()
        .map(|c| fils::tokenize::tubeify(c, cfg.patch))
        .collect::<Result<_>>()?;
    let (n, raw) = grids[0].tokens.dim();
    let flat: Vec<f32> = grids.iter().flat_map(|g| g.tokens.iter().copied()).collect();
    let tokens = Tensor::from_vec(flat, (grids.len(), n, raw), &dev)?;
    let coords: Vec<_> = grids.iter().map(|g| g.coords.clone()).collect();
    let cb = CoordBatch::new(&coords, state.grid, &dev)?;
    let d_model = cfg.model.embed_dim;
    let proj = state.projection()?;
    let g = state
        .teacher_encoder()?
        .forward(&tokens, &cb)?
        .reshape((grids.len() * n, d_model))?;
    let p = state
        .student()?
        .forward(&tokens, &cb)?
        .reshape((grids.len() * n, d_model))?;
    let loss = fp_loss(
        &project_and_normalize(Some(&proj), &p)?,
        &project_and_normalize(Some(&proj), &g)?,
    )?;
    let grads = loss.backward()?;
    let mut teacher_grad = 0.0f64;
    for v in state.teacher.values() {
        if let Some(gr) = grads.get(v.as_tensor()) {
            teacher_grad = teacher_grad.max(gr.abs()?.max_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?);
        }
    }
    let student_has_grad = state.params.values().any(|v| grads.get(v.as_tensor()).is_some());

    Ok((
        mix_err <= 1e-10 && ends && teacher_grad == 0.0 && student_has_grad,
        format!(
            "geometric mix err {mix_err:.1e}, tau endpoints/midpoint exact: {ends}, \
             max teacher grad {teacher_grad:e}, student receives grad: {student_has_grad}"
        ),
    ))
}

// ---- 5. action area --------------------------------------------------------

fn c5_action_area() -> Result<(bool, String)> {
    let mut cfg = FilsConfig::toy();
    cfg.data.pan_prob = 0.0;
    let geom = cfg.data.geometry();
    let params = ActionAreaParams::default();
    let pans = [(2.0f32, 0.0f32), (0.0, 2.0), (-2.0, 0.0), (0.0, -2.0)];
    let moving: Vec<Motion> = Motion::ALL.into_iter().filter(|&m| m != Motion::Still).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut recall, mut precision, mut jac) = (0.0, 0.0, 0.0);
    const N: usize = 50;
    for i in 0..N {
        // redraw until the panned trajectory also stays inside the frame
        let (clip, pclip) = loop {
            let spec = sample_scene(&cfg.data, moving[i % moving.len()], &mut rng)?;
            let mut panned = spec.clone();
            panned.camera_pan = pans[i % pans.len()];
            panned.pan_span = 2;
            if let Ok(pclip) = render_clip(&panned, geom, i as u64) {
                break (render_clip(&spec, geom, i as u64)?, pclip);
            }
        };
        let truth = object_patches(&clip, cfg.patch)?;
        let area = action_area_for_clip(&clip, cfg.patch, &params)?;
        let hit = truth.iter().filter(|&&(y, x)| area.contains(y, x)).count();
        recall += hit as f64 / truth.len().max(1) as f64;
        precision += hit as f64 / area.len().max(1) as f64;

        let parea = action_area_for_clip(&pclip, cfg.patch, &params)?;
        jac += jaccard(&area.patches, &parea.patches);
    }
    let (recall, precision, jac) = (recall / N as f64, precision / N as f64, jac / N as f64);
    Ok((
        recall >= 0.8 && precision >= 0.5 && jac >= 0.7,
        format!("{N} clips: mean recall {recall:.3}, precision {precision:.3}, pan Jaccard {jac:.4}"),
    ))
}

// ---- 6 and 10. overfit and reproducibility ---------------------------------

/// 50 steps on one fixed batch; returns the L_FILS trajectory.
fn overfit_run(scale: Scale) -> Result<Vec<f64>> {
    let mut cfg = scale.config();
    cfg.train.objective = Objective::Fils;
    cfg.data.clip_count = cfg.train.batch_size;
    let clips = render_split(&cfg.data, cfg.seed, Split::Train)?;
    let data = TrainingData::from_clips(&cfg, clips)?;
    let indices: Vec<usize> = (0..data.len()).collect();
    let batch = data.batch(&cfg, &indices, 0)?;
    let mut state = TrainState::new(&cfg)?;
    (0..50).map(|_| Ok(pretrain_step(&mut state, &batch)?.loss)).collect()
}

fn c6_overfit(losses: &[f64]) -> (bool, String) {
    let (first, last) = (losses[0], *losses.last().unwrap());
    let drop = 1.0 - last / first;
    (
        drop >= 0.5 && losses.iter().all(|l| l.is_finite()),
        format!(
            "L_FILS {first:.4} -> {last:.4} over 50 steps, drop {:.1}%",
            100.0 * drop
        ),
    )
}

// ---- 7-9. representation ---------------------------------------------------

struct Arm {
    name: &'static str,
    objective: Objective,
    pool: PoolStrategy,
}

const ARMS: [Arm; 4] = [
    Arm {
        name: "fils",
        objective: Objective::Fils,
        pool: PoolStrategy::PatchAverage,
    },
    Arm {
        name: "fp-only",
        objective: Objective::FpOnly,
        pool: PoolStrategy::PatchAverage,
    },
    Arm {
        name: "mse-baseline",
        objective: Objective::MseBaseline,
        pool: PoolStrategy::PatchAverage,
    },
    Arm {
        name: "single-patch",
        objective: Objective::Fils,
        pool: PoolStrategy::Patch,
    },
];

struct Bench {
    base: FilsConfig,
    data: TrainingData,
    train: Vec<VideoClip>,
    val: Vec<VideoClip>,
    root: tempfile::TempDir,
}

impl Bench {
    fn new(scale: Scale) -> Result<Bench> {
        let root = tempfile::tempdir().expect("temp dir");
        let mut base = scale.config();
        base.data.dir = root.path().join("data");
        generate_dataset(&base.data, base.seed, &base.data.dir, false)?;
        let (_, train) = load_split(&base.data.dir, Split::Train)?;
        let (_, val) = load_split(&base.data.dir, Split::Val)?;
        let data = TrainingData::from_clips(&base, train.clone())?;
        Ok(Bench {
            base,
            data,
            train,
            val,
            root,
        })
    }

    fn pretrain(&self, arm: &Arm, seed: u64) -> Result<FilsModel> {
        let mut cfg = self.base.clone();
        cfg.seed = seed;
        cfg.train.objective = arm.objective;
        cfg.model.pool_strategy = arm.pool;
        cfg.train.out_dir = self.root.path().join(format!("runs/{}-seed{seed}", arm.name));
        let ckpt = pretrain_on(&cfg, &self.data, false, None)?;
        FilsModel::load(&ckpt)
    }

    fn probe(&self, model: &FilsModel, seed: u64) -> Result<f64> {
        Ok(probe(model, &self.train, &self.val, ProbeMode::LinearProbe, seed)?.top1)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn pct(v: &[f64]) -> String {
    let each: Vec<String> = v.iter().map(|a| format!("{:.1}", 100.0 * a)).collect();
    format!("{:.2} [{}]", 100.0 * mean(v), each.join(", "))
}

/// Fraction of moving-object held-out clips whose own caption lights up the
/// ground-truth object patches more than the rest.
fn localization(model: &FilsModel, val: &[VideoClip]) -> Result<(usize, usize)> {
    let patch = model.cfg.patch;
    let (mut hits, mut total) = (0, 0);
    for (i, clip) in val.iter().enumerate() {
        if total == 50 {
            break;
        }
        if clip.action_label == Motion::Still.label() {
            continue;
        }
        let truth = object_patches(clip, patch)?;
        let h = similarity_heatmap(
            model,
            clip,
            &format!("val/{i:06}"),
            &clip.caption,
            model.cfg.heatmap.smooth_sigma,
        )?;
        let n = h.values.len();
        if truth.is_empty() || truth.len() == n {
            continue;
        }
        let inside: f64 = truth.iter().map(|&(y, x)| h.values[[y, x]] as f64).sum();
        let all: f64 = h.values.iter().map(|&v| v as f64).sum();
        let mean_in = inside / truth.len() as f64;
        let mean_out = (all - inside) / (n - truth.len()) as f64;
        hits += (mean_in > mean_out) as usize;
        total += 1;
    }
    Ok((hits, total))
}

fn main() {
    let scale = Scale::from_env();
    let only: Option<Vec<u8>> = std::env::var("FILS_ACCEPTANCE_ONLY").ok().map(|s| {
        s.split(',')
            .map(|x| x.trim().parse().expect("criterion number"))
            .collect()
    });
    let want = |id: u8| only.as_ref().map_or(true, |o| o.contains(&id));
    println!("acceptance suite, scale {}", scale.name());
    let mut out = Vec::new();

    if want(1) {
        out.push(criterion(1, "token geometry", Some(1.0), c1_geometry));
    }
    if want(2) {
        out.push(criterion(2, "tube mask invariants", Some(30.0), c2_masks));
    }
    if want(3) {
        out.push(criterion(3, "loss oracles and gradients", Some(60.0), c3_losses));
    }
    if want(4) {
        out.push(criterion(4, "EMA teacher", Some(30.0), c4_ema));
    }
    if want(5) {
        out.push(criterion(5, "action-area detector", Some(120.0), c5_action_area));
    }
    let mut first_run = None;
    if want(6) {
        out.push(criterion(6, "overfit one batch", Some(300.0), || {
            let losses = overfit_run(scale)?;
            let r = c6_overfit(&losses);
            first_run = Some(losses);
            Ok(r)
        }));
    }

    if want(7) || want(8) || want(9) {
        let bench = Bench::new(scale).expect("acceptance dataset");
        let mut models: BTreeMap<&str, Vec<FilsModel>> = BTreeMap::new();
        let mut acc: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        out.push(criterion(
            7,
            "pretrained vs random-init linear probe",
            Some(7200.0),
            || {
                let mut fils = Vec::new();
                let mut random = Vec::new();
                for seed in SEEDS {
                    let m = bench.pretrain(&ARMS[0], seed)?;
                    fils.push(bench.probe(&m, seed)?);
                    random.push(bench.probe(&FilsModel::random_init(&bench.base, seed)?, seed)?);
                    models.entry("fils").or_default().push(m);
                }
                let gap = 100.0 * (mean(&fils) - mean(&random));
                acc.insert("fils", fils.clone());
                Ok((
                    gap >= 10.0,
                    format!(
                        "top-1 % fils {}, random {}, gap {gap:.2} points (need >= 10)",
                        pct(&fils),
                        pct(&random)
                    ),
                ))
            },
        ));
        if want(8) {
            out.push(criterion(8, "ablation direction", None, || {
                if !acc.contains_key("fils") {
                    return Err(fils::FilsError::InvalidArgument(
                        "criterion 7 did not produce FILS runs".into(),
                    ));
                }
                for arm in &ARMS[1..] {
                    let mut a = Vec::new();
                    for seed in SEEDS {
                        a.push(bench.probe(&bench.pretrain(arm, seed)?, seed)?);
                    }
                    acc.insert(arm.name, a);
                }
                let m = |k: &str| 100.0 * mean(&acc[k]);
                let (f, fp, mse, single) = (m("fils"), m("fp-only"), m("mse-baseline"), m("single-patch"));
                Ok((
                    f >= fp - 1.0 && f >= mse - 1.0 && f >= single - 1.0,
                    format!(
                        "top-1 % fils {}, fp-only {}, mse-baseline {}, single-patch {}",
                        pct(&acc["fils"]),
                        pct(&acc["fp-only"]),
                        pct(&acc["mse-baseline"]),
                        pct(&acc["single-patch"])
                    ),
                ))
            }));
        }
        if want(9) {
            out.push(criterion(9, "semantic localization", Some(300.0), || {
                let model = &models
                    .get("fils")
                    .ok_or_else(|| fils::FilsError::InvalidArgument("criterion 7 did not produce a model".into()))?[0];
                let (hits, total) = localization(model, &bench.val)?;
                let frac = hits as f64 / total.max(1) as f64;
                Ok((
                    total == 50 && frac >= 0.7,
                    format!(
                        "{hits}/{total} clips brighter inside the object ({:.0}%, need >= 70%)",
                        100.0 * frac
                    ),
                ))
            }));
        }
    }

    if want(10) {
        out.push(criterion(10, "reproducibility", None, || {
            let a = match first_run.take() {
                Some(l) => l,
                None => overfit_run(scale)?,
            };
            let b = overfit_run(scale)?;
            let diff = (a.last().unwrap() - b.last().unwrap()).abs();
            Ok((
                diff <= 1e-6,
                format!(
                    "final loss {:.8} vs {:.8}, |diff| {diff:e}",
                    a.last().unwrap(),
                    b.last().unwrap()
                ),
            ))
        }));
    }

    let failed: Vec<u8> = out.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        out.len() - failed.len(),
        failed.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(" ({failed:?})")
        }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
