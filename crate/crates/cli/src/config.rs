//! Flat `key=value` training configuration files, `#` for comments.
//!
//! Keys mirror the run config: `alpha`, `w_pose`, `w_rgb`,
//! `checkpoint_every`, `seed` (rebases every stage seed), `stages` (comma
//! list like `A,B,C`), `model.<field>`, and per-stage fields like
//! `a.total_steps` or `c.max_views`. Later assignments win; command line
//! `--set key=value` pairs are applied after the file.

use streampoint_core::train::{RunConfig, Stage, TrainConfig};

use crate::errors::AppError;

pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>, AppError> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(AppError::Data(format!(
                "config line {}: expected key=value, got {line:?}",
                lineno + 1
            )));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, AppError> {
    v.parse()
        .map_err(|_| AppError::Data(format!("config key {key}: cannot parse {v:?}")))
}

fn stage_mut<'a>(run: &'a mut RunConfig, letter: &str, key: &str) -> Result<&'a mut TrainConfig, AppError> {
    let want = match letter {
        "a" => Stage::A,
        "b" => Stage::B,
        "c" => Stage::C,
        _ => return Err(AppError::Data(format!("config key {key}: unknown stage {letter:?}"))),
    };
    run.stages
        .iter_mut()
        .find(|s| s.stage == want)
        .ok_or_else(|| AppError::Data(format!("config key {key}: run has no stage {letter}")))
}

pub fn apply(run: &mut RunConfig, kv: &[(String, String)]) -> Result<(), AppError> {
    for (k, v) in kv {
        match k.as_str() {
            "alpha" => run.alpha = parse_num(k, v)?,
            "w_pose" => run.w_pose = parse_num(k, v)?,
            "w_rgb" => run.w_rgb = parse_num(k, v)?,
            "checkpoint_every" => run.checkpoint_every = parse_num(k, v)?,
            "seed" => {
                let base: u64 = parse_num(k, v)?;
                for (i, s) in run.stages.iter_mut().enumerate() {
                    s.seed = base + i as u64;
                }
            }
            "stages" => {
                let mut stages = Vec::new();
                for (i, part) in v.split(',').enumerate() {
                    let stage = match part.trim() {
                        "A" | "a" => Stage::A,
                        "B" | "b" => Stage::B,
                        "C" | "c" => Stage::C,
                        other => {
                            return Err(AppError::Data(format!(
                                "config key stages: unknown stage {other:?}"
                            )))
                        }
                    };
                    stages.push(TrainConfig::stage_defaults(stage, i as u64));
                }
                run.stages = stages;
            }
            _ => {
                let Some((prefix, field)) = k.split_once('.') else {
                    return Err(AppError::Data(format!("unknown config key {k:?}")));
                };
                if prefix == "model" {
                    match field {
                        "patch" => run.model.patch = parse_num(k, v)?,
                        "d_enc" => run.model.d_enc = parse_num(k, v)?,
                        "d_dec" => run.model.d_dec = parse_num(k, v)?,
                        "enc_blocks" => run.model.enc_blocks = parse_num(k, v)?,
                        "dec_blocks" => run.model.dec_blocks = parse_num(k, v)?,
                        "raymap_enc_blocks" => run.model.raymap_enc_blocks = parse_num(k, v)?,
                        "heads" => run.model.heads = parse_num(k, v)?,
                        "n_state" => run.model.n_state = parse_num(k, v)?,
                        "height" => run.model.height = parse_num(k, v)?,
                        "width" => run.model.width = parse_num(k, v)?,
                        _ => {
                            return Err(AppError::Data(format!("unknown config key {k:?}")))
                        }
                    }
                } else {
                    let s = stage_mut(run, prefix, k)?;
                    match field {
                        "lr0" => s.lr0 = parse_num(k, v)?,
                        "warmup_steps" => s.warmup_steps = parse_num(k, v)?,
                        "total_steps" => s.total_steps = parse_num(k, v)?,
                        "batch_size" => s.batch_size = parse_num(k, v)?,
                        "beta1" => s.beta1 = parse_num(k, v)?,
                        "beta2" => s.beta2 = parse_num(k, v)?,
                        "eps" => s.eps = parse_num(k, v)?,
                        "weight_decay" => s.weight_decay = parse_num(k, v)?,
                        "grad_clip" => s.grad_clip = parse_num(k, v)?,
                        "seed" => s.seed = parse_num(k, v)?,
                        "min_views" => s.min_views = parse_num(k, v)?,
                        "max_views" => s.max_views = parse_num(k, v)?,
                        "raymap_p" => s.raymap_p = parse_num(k, v)?,
                        _ => {
                            return Err(AppError::Data(format!("unknown config key {k:?}")))
                        }
                    }
                }
            }
        }
    }
    Ok(())
}
