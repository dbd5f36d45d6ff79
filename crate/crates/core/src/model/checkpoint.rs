//! Checkpoint layout: a directory of tensor container files named by
//! parameter path plus a JSON manifest with names, shapes, dtype, the model
//! configuration and the training step. Optimizer moments, when present,
//! live under `optim/` so a run can resume bit-identically.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::tensor::{read_tensor, write_tensor, ContainerError, Element};

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("checkpoint dtype {found} does not match requested {expected}")]
    DtypeMismatch { found: String, expected: String },
    #[error("unsupported checkpoint version {version}")]
    Version { version: u32 },
    #[error("parameter {name}: checkpoint shape {found:?} does not match model shape {expected:?}")]
    ShapeMismatch {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("parameter set mismatch: {detail}")]
    ParamSet { detail: String },
    #[error("invalid model config in checkpoint: {0}")]
    Config(#[from] super::ConfigError),
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    dtype: String,
    step: u64,
    config: ModelConfig,
    params: Vec<ParamEntry>,
    optimizer_state: bool,
}

const VERSION: u32 = 1;

/// Optimizer moments keyed by parameter name.
pub struct Moments<T: Element> {
    pub m: BTreeMap<String, ArrayD<T>>,
    pub v: BTreeMap<String, ArrayD<T>>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn param_file(dir: &Path, name: &str) -> PathBuf {
    dir.join("params").join(format!("{name}.ptm"))
}

pub fn save_checkpoint<T: Element>(
    dir: &Path,
    model: &Model<T>,
    step: u64,
    moments: Option<&Moments<T>>,
) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir.join("params")).map_err(io_err(dir))?;
    let mut entries = Vec::new();
    for p in model.params.iter_sorted() {
        write_tensor(&param_file(dir, &p.name), &p.value)?;
        entries.push(ParamEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
        });
    }
    if let Some(mo) = moments {
        let od = dir.join("optim");
        fs::create_dir_all(&od).map_err(io_err(dir))?;
        for (name, m) in &mo.m {
            write_tensor(&od.join(format!("{name}.m.ptm")), m)?;
        }
        for (name, v) in &mo.v {
            write_tensor(&od.join(format!("{name}.v.ptm")), v)?;
        }
    }
    let manifest = Manifest {
        version: VERSION,
        dtype: T::DTYPE.name().to_string(),
        step,
        config: model.cfg.clone(),
        params: entries,
        optimizer_state: moments.is_some(),
    };
    let path = dir.join("manifest.json");
    let tmp = dir.join("manifest.json.tmp");
    let data = serde_json::to_vec_pretty(&manifest).map_err(|source| CheckpointError::Json {
        path: path.display().to_string(),
        source,
    })?;
    fs::write(&tmp, data).map_err(io_err(&tmp))?;
    fs::rename(&tmp, &path).map_err(io_err(&path))?;
    Ok(())
}

pub fn load_checkpoint<T: Element>(
    dir: &Path,
) -> Result<(Model<T>, u64, Option<Moments<T>>), CheckpointError> {
    let mpath = dir.join("manifest.json");
    let data = fs::read(&mpath).map_err(io_err(&mpath))?;
    let manifest: Manifest =
        serde_json::from_slice(&data).map_err(|source| CheckpointError::Json {
            path: mpath.display().to_string(),
            source,
        })?;
    if manifest.version != VERSION {
        return Err(CheckpointError::Version {
            version: manifest.version,
        });
    }
    if manifest.dtype != T::DTYPE.name() {
        return Err(CheckpointError::DtypeMismatch {
            found: manifest.dtype,
            expected: T::DTYPE.name().to_string(),
        });
    }
    manifest.config.validate()?;
    // Rebuild the module structure, then overwrite every value by name.
    let mut model = Model::<T>::new(manifest.config.clone(), 0)
        .map_err(|e| CheckpointError::ParamSet { detail: e.to_string() })?;
    if manifest.params.len() != model.params.len() {
        return Err(CheckpointError::ParamSet {
            detail: format!(
                "checkpoint has {} parameters, model expects {}",
                manifest.params.len(),
                model.params.len()
            ),
        });
    }
    for entry in &manifest.params {
        let id = model.params.id_of(&entry.name).ok_or_else(|| CheckpointError::ParamSet {
            detail: format!("unknown parameter {}", entry.name),
        })?;
        let value: ArrayD<T> = read_tensor(&param_file(dir, &entry.name))?;
        let expected = model.params.get(id).value.shape().to_vec();
        if value.shape() != expected {
            return Err(CheckpointError::ShapeMismatch {
                name: entry.name.clone(),
                found: value.shape().to_vec(),
                expected,
            });
        }
        *model.params.value_mut(id) = value;
    }
    let moments = if manifest.optimizer_state {
        let od = dir.join("optim");
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for p in model.params.iter_sorted() {
            m.insert(p.name.clone(), read_tensor(&od.join(format!("{}.m.ptm", p.name)))?);
            v.insert(p.name.clone(), read_tensor(&od.join(format!("{}.v.ptm", p.name)))?);
        }
        Some(Moments { m, v })
    } else {
        None
    };
    Ok((model, manifest.step, moments))
}
