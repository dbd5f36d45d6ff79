//! Staged training loop.
//!
//! Stages follow a shrunk curriculum: short static full-supervision
//! sequences first, then dynamic scenes and partial annotations, finally
//! longer sequences with frozen encoders. Every random decision — batch
//! composition, view counts, color jitter, raymap masking — is a pure
//! function of (stage seed, global step), so a run is reproducible and a
//! checkpoint resume continues bit-identically.

mod adamw;
mod schedule;

pub use adamw::{adamw_step, AdamWParams, AdamWState, OptimError};
pub use schedule::lr_schedule;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::ArrayD;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{camera_to_raymap, depth_to_pointmap, pose_compose, pose_inverse,
    transform_pointmap, Pose};
use crate::losses::{sequence_loss_g, FrameTarget, LossConfig, LossError};
use crate::model::checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, Moments};
use crate::model::{is_encoder_param, patch_mask, patch_pixels, Model, ModelConfig, ModelError,
    ModelInput, StepVars};
use crate::synth::{mask_with_raymaps, read_sequence, FrameKind, SequenceSample, Supervision,
    SynthError};
use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("no sequences found under {dir}")]
    MissingData { dir: String },
    #[error("no sequences eligible for stage {stage} (need {need} views)")]
    NoEligibleData { stage: &'static str, need: usize },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    A,
    B,
    C,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::A => "A",
            Stage::B => "B",
            Stage::C => "C",
        }
    }
}

/// Optimization config of one curriculum stage.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub lr0: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub min_views: usize,
    pub max_views: usize,
    /// Probability of replacing a non-first frame by its raymap.
    pub raymap_p: f64,
}

impl TrainConfig {
    pub fn stage_defaults(stage: Stage, seed: u64) -> TrainConfig {
        TrainConfig {
            stage,
            lr0: 1e-4,
            warmup_steps: 100,
            total_steps: 1000,
            batch_size: 2,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.05,
            grad_clip: 1.0,
            seed,
            min_views: 4,
            max_views: 4,
            raymap_p: 0.2,
        }
    }
}

/// A whole training run: model shape, loss weights, curriculum stages.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub stages: Vec<TrainConfig>,
    pub checkpoint_every: u64,
    pub alpha: f64,
    pub w_pose: f64,
    pub w_rgb: f64,
}

impl RunConfig {
    pub fn total_steps(&self) -> u64 {
        self.stages.iter().map(|s| s.total_steps).sum()
    }
}

/// One line of the training log.
#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct LogRecord {
    pub step: u64,
    pub stage: String,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_conf: Option<f64>,
    pub loss_pose: Option<f64>,
    pub loss_rgb: Option<f64>,
    pub wall_ms: u64,
}

/// Sequences loaded into memory (desk-scale datasets fit comfortably).
pub struct DataSet {
    pub seqs: Vec<LoadedSeq>,
}

pub struct LoadedSeq {
    pub name: String,
    pub sample: SequenceSample,
    pub has_dynamic: bool,
}

impl DataSet {
    pub fn load(dir: &Path) -> Result<DataSet, TrainError> {
        let mut names: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|source| TrainError::Io {
                path: dir.display().to_string(),
                source,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("manifest.json").is_file())
            .collect();
        names.sort();
        if names.is_empty() {
            return Err(TrainError::MissingData {
                dir: dir.display().to_string(),
            });
        }
        let mut seqs = Vec::with_capacity(names.len());
        for path in names {
            let sample = read_sequence(&path)?;
            let has_dynamic = sample
                .frames
                .iter()
                .any(|f| f.dynmask.iter().any(|&m| m > 0.5));
            seqs.push(LoadedSeq {
                name: path
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                sample,
                has_dynamic,
            });
        }
        Ok(DataSet { seqs })
    }

    fn multiview_ids(&self, cfg: &TrainConfig) -> Vec<usize> {
        self.seqs
            .iter()
            .enumerate()
            .filter(|(_, s)| s.sample.frames.len() >= cfg.min_views.max(2))
            .filter(|(_, s)| match cfg.stage {
                Stage::A => {
                    !s.has_dynamic
                        && s.sample.frames[0].supervision == Supervision::Full
                }
                Stage::B | Stage::C => true,
            })
            .map(|(i, _)| i)
            .collect()
    }

    fn singleview_ids(&self) -> Vec<usize> {
        self.seqs
            .iter()
            .enumerate()
            .filter(|(_, s)| s.sample.frames.len() == 1)
            .map(|(i, _)| i)
            .collect()
    }
}

/// One model input with its prepared supervision.
struct PreparedFrame {
    input: ModelInput,
    target: FrameTarget<f32>,
    reset_before: bool,
}

struct PreparedSequence {
    frames: Vec<PreparedFrame>,
    loss_cfg: LossConfig,
}

fn step_rng(seed: u64, gstep: u64, salt: u64) -> ChaCha12Rng {
    let mixed = seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(gstep.wrapping_mul(0xbf58_476d_1ce4_e5b9))
        .wrapping_add(salt.wrapping_mul(0x94d0_49bb_1331_11eb))
        .wrapping_add(0x2545_f491_4f6c_dd1d);
    ChaCha12Rng::seed_from_u64(mixed)
}

fn jitter_image(img: &ndarray::Array3<f32>, gain: [f32; 3], offset: [f32; 3]) -> ndarray::Array3<f32> {
    let mut out = img.clone();
    let (h, w, _) = out.dim();
    for v in 0..h {
        for u in 0..w {
            for c in 0..3 {
                out[[v, u, c]] = (out[[v, u, c]] * gain[c] + offset[c]).clamp(0.0, 1.0);
            }
        }
    }
    out
}

fn prepare_frames(
    slice: &SequenceSample,
    patch: usize,
    reset_each_view: bool,
    alpha_cfg: (f64, f64, f64),
    rng: &mut ChaCha12Rng,
) -> Result<PreparedSequence, TrainError> {
    // Sequence-level color jitter: one gain/offset for all frames.
    let gain = [
        rng.random_range(0.8..1.2f32),
        rng.random_range(0.8..1.2f32),
        rng.random_range(0.8..1.2f32),
    ];
    let offset = [
        rng.random_range(-0.1..0.1f32),
        rng.random_range(-0.1..0.1f32),
        rng.random_range(-0.1..0.1f32),
    ];

    let inv0 = pose_inverse(&slice.frames[0].pose);
    let mut frames = Vec::with_capacity(slice.frames.len());
    for (i, f) in slice.frames.iter().enumerate() {
        // For stacked single views every frame is its own world origin.
        let rel = if reset_each_view {
            Pose::identity()
        } else {
            pose_compose(&inv0, &f.pose)
        };
        let jittered = jitter_image(&f.image, gain, offset);
        let n_pix = f.image.dim().0 * f.image.dim().1;

        let (gt_self, gt_world, valid) = if f.supervision == Supervision::CameraOnly {
            (None, None, vec![false; n_pix])
        } else {
            let depth = f.depth.mapv(|v| v as f64);
            let pm_self = depth_to_pointmap(&depth, &f.k).map_err(ModelError::Geometry)?;
            let pm_world = transform_pointmap(&pm_self, &rel).map_err(ModelError::Geometry)?;
            let valid = patch_mask(&pm_self.valid, patch);
            let to_t = |pm: &crate::geometry::Pointmap| {
                let pts32 = pm.points.mapv(|v| v as f32);
                patch_pixels(&pts32.view(), patch)
            };
            (Some(to_t(&pm_self)), Some(to_t(&pm_world)), valid)
        };

        let (input, gt_color) = match f.kind {
            FrameKind::Image => (ModelInput::Image(jittered), None),
            FrameKind::Raymap => {
                let rm = camera_to_raymap(&f.k, &rel);
                let color = patch_pixels(&jittered.view(), patch);
                (ModelInput::Raymap(rm), Some(color))
            }
        };

        frames.push(PreparedFrame {
            input,
            target: FrameTarget {
                gt_self,
                gt_world,
                valid,
                gt_quat: Some(rel.q),
                gt_trans: Some(rel.t),
                gt_color,
            },
            reset_before: reset_each_view || i == 0,
        });
    }
    let (alpha, w_pose, w_rgb) = alpha_cfg;
    Ok(PreparedSequence {
        frames,
        loss_cfg: LossConfig {
            alpha,
            w_pose,
            w_rgb,
            metric_flag: slice.metric_flag,
        },
    })
}

/// Assemble one training sequence for a batch slot.
fn prepare_slot(
    data: &DataSet,
    cfg: &TrainConfig,
    run: &RunConfig,
    pool: &[usize],
    single_pool: &[usize],
    gstep: u64,
    slot: u64,
) -> Result<PreparedSequence, TrainError> {
    let mut rng = step_rng(cfg.seed, gstep, 1000 + slot);
    let pick = pool[rng.random_range(0..pool.len())];
    let seq = &data.seqs[pick];

    // Single-view samples train as stacks of independent views with a state
    // reset before each one.
    if seq.sample.frames.len() == 1 {
        let k = cfg.min_views.max(1);
        let mut frames = Vec::with_capacity(k);
        for _ in 0..k {
            let j = single_pool[rng.random_range(0..single_pool.len())];
            frames.push(data.seqs[j].sample.frames[0].clone());
        }
        let stacked = SequenceSample {
            frames,
            metric_flag: true,
            mode: seq.sample.mode,
        };
        return prepare_frames(
            &stacked,
            run.model.patch,
            true,
            (run.alpha, run.w_pose, run.w_rgb),
            &mut rng,
        );
    }

    let avail = seq.sample.frames.len();
    let hi = cfg.max_views.min(avail);
    let lo = cfg.min_views.min(hi);
    let k = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    let mut slice = SequenceSample {
        frames: seq.sample.frames[..k].to_vec(),
        metric_flag: seq.sample.metric_flag,
        mode: seq.sample.mode,
    };
    let full = slice.frames[0].supervision == Supervision::Full;
    if full && slice.metric_flag && cfg.raymap_p > 0.0 {
        slice = mask_with_raymaps(slice, cfg.raymap_p, &mut rng)?;
    }
    prepare_frames(
        &slice,
        run.model.patch,
        false,
        (run.alpha, run.w_pose, run.w_rgb),
        &mut rng,
    )
}

struct SeqResult {
    grads: Vec<Option<ArrayD<f32>>>,
    total: f64,
    conf: Option<f64>,
    pose: Option<f64>,
    rgb: Option<f64>,
}

/// Forward/backward of one sequence on its own graph.
fn sequence_grads(
    model: &Model<f32>,
    prep: &PreparedSequence,
    freeze_encoders: bool,
) -> Result<SeqResult, TrainError> {
    let mut g = crate::tensor::Graph::<f32>::new();
    let b = model
        .params
        .bind(&mut g, |name| !(freeze_encoders && is_encoder_param(name)));
    let s0 = b[model.params.id_of("state.init").expect("state.init exists")];
    let mut state = s0;
    let mut steps: Vec<StepVars> = Vec::with_capacity(prep.frames.len());
    for f in &prep.frames {
        if f.reset_before {
            state = s0;
        }
        let update = f.input.is_image();
        let sv = model.step_g(&mut g, &b, state, &f.input, update)?;
        state = sv.state_after;
        steps.push(sv);
    }
    let step_refs: Vec<&StepVars> = steps.iter().collect();
    let target_refs: Vec<&FrameTarget<f32>> = prep.frames.iter().map(|f| &f.target).collect();
    let loss = sequence_loss_g(&mut g, &step_refs, &target_refs, &prep.loss_cfg)?;
    let grads = g.backward(loss.total)?;

    let mut out = Vec::new();
    let mut grads = grads;
    for &id in &model.params.sorted_ids() {
        out.push(grads.take(b[id]));
    }
    let scalar = |v: Option<crate::tensor::Var>| v.map(|v| g.scalar(v) as f64);
    Ok(SeqResult {
        grads: out,
        total: g.scalar(loss.total) as f64,
        conf: scalar(loss.conf),
        pose: scalar(loss.pose),
        rgb: scalar(loss.rgb),
    })
}

fn stage_of(run: &RunConfig, gstep: u64) -> (usize, u64) {
    let mut start = 0;
    for (i, s) in run.stages.iter().enumerate() {
        if gstep < start + s.total_steps {
            return (i, gstep - start);
        }
        start += s.total_steps;
    }
    let last = run.stages.len() - 1;
    (last, run.stages[last].total_steps)
}

/// Outcome of a training run.
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub records: Vec<LogRecord>,
}

/// Run (or resume) the staged training loop. Checkpoints land under
/// `out_dir` (`step_NNNNNN/` plus `final/`); the log is appended to
/// `out_dir/train_log.jsonl`, one JSON object per step.
pub fn train(
    run: &RunConfig,
    data_dir: &Path,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    run.model.validate().map_err(ModelError::Config)?;
    let data = DataSet::load(data_dir)?;
    std::fs::create_dir_all(out_dir).map_err(|source| TrainError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;

    let (mut model, start_step, moments) = match resume {
        Some(ck) => {
            let (m, step, mo) = load_checkpoint::<f32>(ck)?;
            (m, step, mo)
        }
        None => (
            Model::<f32>::new(run.model.clone(), run.stages[0].seed)?,
            0,
            None,
        ),
    };
    let mut state = match moments {
        Some(mo) => {
            let mut st = AdamWState::zeros(&model.params);
            for (slot, p) in model.params.iter_sorted().enumerate() {
                if let Some(m) = mo.m.get(&p.name) {
                    st.m[slot] = m.clone();
                }
                if let Some(v) = mo.v.get(&p.name) {
                    st.v[slot] = v.clone();
                }
            }
            st
        }
        None => AdamWState::zeros(&model.params),
    };

    let log_path = out_dir.join("train_log.jsonl");
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|source| TrainError::Io {
            path: log_path.display().to_string(),
            source,
        })?;

    let total = run.total_steps();
    let mut records = Vec::new();
    for gstep in start_step..total {
        let started = std::time::Instant::now();
        let (stage_idx, local) = stage_of(run, gstep);
        let cfg = &run.stages[stage_idx];
        let freeze = cfg.stage == Stage::C;
        let lr = lr_schedule(local, cfg.lr0, cfg.warmup_steps, cfg.total_steps);

        let pool = data.multiview_ids(cfg);
        let mut full_pool = pool.clone();
        if cfg.stage != Stage::A {
            full_pool.extend(data.singleview_ids());
            full_pool.sort_unstable();
        }
        if full_pool.is_empty() {
            return Err(TrainError::NoEligibleData {
                stage: cfg.stage.name(),
                need: cfg.min_views,
            });
        }
        let single_pool = data.singleview_ids();

        let preps: Vec<PreparedSequence> = (0..cfg.batch_size as u64)
            .map(|slot| prepare_slot(&data, cfg, run, &full_pool, &single_pool, gstep, slot))
            .collect::<Result<_, _>>()?;

        let results: Vec<Result<SeqResult, TrainError>> = preps
            .par_iter()
            .map(|p| sequence_grads(&model, p, freeze))
            .collect();
        let mut merged: Vec<Option<ArrayD<f32>>> = vec![None; model.params.len()];
        let mut total_sum = 0.0;
        let (mut conf_acc, mut pose_acc, mut rgb_acc) = ((0.0, 0u32), (0.0, 0u32), (0.0, 0u32));
        let batch = results.len() as f64;
        for r in results {
            let r = r?;
            total_sum += r.total;
            if let Some(v) = r.conf {
                conf_acc = (conf_acc.0 + v, conf_acc.1 + 1);
            }
            if let Some(v) = r.pose {
                pose_acc = (pose_acc.0 + v, pose_acc.1 + 1);
            }
            if let Some(v) = r.rgb {
                rgb_acc = (rgb_acc.0 + v, rgb_acc.1 + 1);
            }
            for (slot, gr) in r.grads.into_iter().enumerate() {
                if let Some(gr) = gr {
                    match &mut merged[slot] {
                        Some(acc) => acc.zip_mut_with(&gr, |a, &b| *a += b),
                        m @ None => *m = Some(gr),
                    }
                }
            }
        }
        let scale = 1.0 / batch as f32;
        let mut norm_sq = 0.0f64;
        for m in merged.iter_mut().flatten() {
            let mut acc = 0.0f64;
            m.mapv_inplace(|v| {
                let s = v * scale;
                acc += (s as f64) * (s as f64);
                s
            });
            norm_sq += acc;
        }
        let norm = norm_sq.sqrt();
        if norm > cfg.grad_clip {
            let s = (cfg.grad_clip / norm) as f32;
            for m in merged.iter_mut().flatten() {
                m.mapv_inplace(|v| v * s);
            }
        }
        adamw_step(
            &mut model.params,
            &mut state,
            &merged,
            gstep + 1,
            &AdamWParams {
                lr,
                beta1: cfg.beta1,
                beta2: cfg.beta2,
                eps: cfg.eps,
                weight_decay: cfg.weight_decay,
            },
            true,
        )?;

        let mean_of = |acc: (f64, u32)| {
            if acc.1 > 0 {
                Some(acc.0 / acc.1 as f64)
            } else {
                None
            }
        };
        let record = LogRecord {
            step: gstep + 1,
            stage: cfg.stage.name().to_string(),
            lr,
            loss_total: total_sum / batch,
            loss_conf: mean_of(conf_acc),
            loss_pose: mean_of(pose_acc),
            loss_rgb: mean_of(rgb_acc),
            wall_ms: started.elapsed().as_millis() as u64,
        };
        let line = serde_json::to_string(&record).expect("log record serializes");
        writeln!(log, "{line}").map_err(|source| TrainError::Io {
            path: log_path.display().to_string(),
            source,
        })?;
        records.push(record);

        let stage_end = {
            let (_, next_local) = stage_of(run, gstep + 1);
            next_local == 0 || gstep + 1 == total
        };
        if (gstep + 1) % run.checkpoint_every == 0 || stage_end {
            let dir = out_dir.join(format!("step_{:06}", gstep + 1));
            save_checkpoint(&dir, &model, gstep + 1, Some(&moments_of(&model, &state)))?;
        }
    }

    let final_dir = out_dir.join("final");
    save_checkpoint(&final_dir, &model, total, Some(&moments_of(&model, &state)))?;
    Ok(TrainOutcome {
        final_checkpoint: final_dir,
        records,
    })
}

fn moments_of(model: &Model<f32>, state: &AdamWState<f32>) -> Moments<f32> {
    let mut m = BTreeMap::new();
    let mut v = BTreeMap::new();
    for (slot, p) in model.params.iter_sorted().enumerate() {
        m.insert(p.name.clone(), state.m[slot].clone());
        v.insert(p.name.clone(), state.v[slot].clone());
    }
    Moments { m, v }
}

// ---------------------------------------------------------------------------
// Presets.
// ---------------------------------------------------------------------------

/// Overfit one scene: a single stage-A run sized for minutes on a CPU.
pub fn preset_overfit(seed: u64) -> RunConfig {
    let mut a = TrainConfig::stage_defaults(Stage::A, seed);
    a.lr0 = 3e-4;
    a.total_steps = 2000;
    a.warmup_steps = 100;
    a.batch_size = 1;
    RunConfig {
        model: ModelConfig::default(),
        stages: vec![a],
        checkpoint_every: 1000,
        alpha: 0.2,
        w_pose: 1.0,
        w_rgb: 1.0,
    }
}

/// Generalization smoke: all three stages, small step counts.
pub fn preset_smoke(seed: u64) -> RunConfig {
    let mut a = TrainConfig::stage_defaults(Stage::A, seed);
    a.lr0 = 3e-4;
    a.total_steps = 1400;
    a.warmup_steps = 100;
    let mut b = TrainConfig::stage_defaults(Stage::B, seed + 1);
    b.lr0 = 2e-4;
    b.total_steps = 500;
    b.warmup_steps = 50;
    let mut c = TrainConfig::stage_defaults(Stage::C, seed + 2);
    c.lr0 = 1e-4;
    c.total_steps = 500;
    c.warmup_steps = 50;
    c.min_views = 4;
    c.max_views = 8;
    RunConfig {
        model: ModelConfig::default(),
        stages: vec![a, b, c],
        checkpoint_every: 500,
        alpha: 0.2,
        w_pose: 1.0,
        w_rgb: 1.0,
    }
}

/// Tiny run (small model, few steps) for determinism and resume tests.
pub fn preset_tiny(seed: u64) -> RunConfig {
    let mut a = TrainConfig::stage_defaults(Stage::A, seed);
    a.total_steps = 30;
    a.warmup_steps = 5;
    a.batch_size = 1;
    a.min_views = 3;
    a.max_views = 3;
    RunConfig {
        model: ModelConfig::small(),
        stages: vec![a],
        checkpoint_every: 15,
        alpha: 0.2,
        w_pose: 1.0,
        w_rgb: 1.0,
    }
}
