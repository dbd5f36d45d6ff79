pub mod eval;
pub mod gen;
pub mod infer;
pub mod query;
pub mod revisit;
pub mod selftest;
pub mod train;

use std::path::{Path, PathBuf};

use ndarray::Array2;
use streampoint_core::model::{Model, ModelInput, PredictionSet};
use streampoint_core::ply::PlyFrame;
use streampoint_core::synth::{read_sequence, FrameKind, SequenceSample};
use streampoint_core::tensor::write_tensor;

use crate::errors::AppError;

/// Parse `a..b` (end exclusive) or a single number as `n..n+1`.
pub fn parse_range(text: &str) -> Result<std::ops::Range<u64>, AppError> {
    let bad = || AppError::Usage(format!("expected N or A..B, got {text:?}"));
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.parse().map_err(|_| bad())?;
        let b: u64 = b.parse().map_err(|_| bad())?;
        if b <= a {
            return Err(bad());
        }
        Ok(a..b)
    } else {
        let n: u64 = text.parse().map_err(|_| bad())?;
        Ok(n..n + 1)
    }
}

/// All sequence directories under a dataset root, sorted by name.
pub fn load_sequences(dir: &Path) -> Result<Vec<(String, SequenceSample)>, AppError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| AppError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.json").is_file())
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(AppError::Data(format!(
            "{}: no sequence directories found",
            dir.display()
        )));
    }
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let name = p
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        out.push((name, read_sequence(&p)?));
    }
    Ok(out)
}

/// Model inputs of a stored sequence, honoring per-frame kinds: raymap
/// frames are rebuilt from their intrinsics and first-frame-relative pose.
pub fn sequence_inputs(sample: &SequenceSample) -> Vec<ModelInput> {
    let rel = streampoint_core::eval::relative_poses(sample);
    sample
        .frames
        .iter()
        .zip(rel.iter())
        .map(|(f, rp)| match f.kind {
            FrameKind::Image => ModelInput::Image(f.image.clone()),
            FrameKind::Raymap => {
                ModelInput::Raymap(streampoint_core::geometry::camera_to_raymap(&f.k, rp))
            }
        })
        .collect()
}

/// Write one prediction set as tensor containers under `dir`.
pub fn write_prediction(dir: &Path, pred: &PredictionSet) -> Result<(), AppError> {
    std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    let f32_3 = |a: &ndarray::Array3<f64>| a.mapv(|v| v as f32).into_dyn();
    let f32_2 = |a: &Array2<f64>| a.mapv(|v| v as f32).into_dyn();
    write_tensor(&dir.join("pts_self.ptm"), &f32_3(&pred.x_self.points))
        .map_err(|e| AppError::Data(e.to_string()))?;
    write_tensor(&dir.join("conf_self.ptm"), &f32_2(&pred.c_self))
        .map_err(|e| AppError::Data(e.to_string()))?;
    write_tensor(&dir.join("pts_world.ptm"), &f32_3(&pred.x_world.points))
        .map_err(|e| AppError::Data(e.to_string()))?;
    write_tensor(&dir.join("conf_world.ptm"), &f32_2(&pred.c_world))
        .map_err(|e| AppError::Data(e.to_string()))?;
    if let Some(color) = &pred.color {
        write_tensor(&dir.join("color.ptm"), &f32_3(color))
            .map_err(|e| AppError::Data(e.to_string()))?;
    }
    Ok(())
}

#[derive(serde::Serialize)]
pub struct PoseEntry {
    pub frame: usize,
    pub q: [f64; 4],
    pub t: [f64; 3],
}

pub fn write_poses(path: &Path, preds: &[PredictionSet]) -> Result<(), AppError> {
    let entries: Vec<PoseEntry> = preds
        .iter()
        .enumerate()
        .map(|(i, p)| PoseEntry {
            frame: i,
            q: p.pose.q,
            t: p.pose.t,
        })
        .collect();
    let data = serde_json::to_vec_pretty(&entries)
        .map_err(|e| AppError::Data(format!("poses: {e}")))?;
    std::fs::write(path, data).map_err(|e| AppError::io(path, e))
}

/// Merge predictions into one PLY: world points colored by the input
/// images (or the predicted colors for raymap queries).
pub fn write_cloud(
    path: &Path,
    preds: &[PredictionSet],
    sample: &SequenceSample,
    threshold: f64,
) -> Result<(), AppError> {
    let colors: Vec<ndarray::Array3<f64>> = preds
        .iter()
        .zip(sample.frames.iter())
        .map(|(p, f)| match &p.color {
            Some(c) => c.clone(),
            None => f.image.mapv(|v| v as f64),
        })
        .collect();
    let frames: Vec<PlyFrame<'_>> = preds
        .iter()
        .zip(colors.iter())
        .map(|(p, c)| PlyFrame {
            points: &p.x_world,
            colors: c,
            confidence: &p.c_world,
        })
        .collect();
    streampoint_core::ply::write_ply(path, &frames, threshold)?;
    Ok(())
}

/// Load the f32 model of a checkpoint directory.
pub fn load_model(ckpt: &Path) -> Result<Model<f32>, AppError> {
    let (model, _, _) = streampoint_core::model::checkpoint::load_checkpoint::<f32>(ckpt)?;
    Ok(model)
}
