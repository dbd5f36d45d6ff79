//! Sequence directory layout. `manifest.json` carries the metadata and the
//! per-frame file names; pixel data lives in tensor container files. The
//! round trip is bit-exact: images/depths/masks are stored as the f32 they
//! are, intrinsics and poses as JSON f64 (shortest round-trip encoding).

use std::fs;
use std::path::Path;

use ndarray::Ix2;
use serde::{Deserialize, Serialize};

use super::{FrameKind, FrameSample, SequenceMode, SequenceSample, Supervision, SynthError};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::tensor::{read_tensor, write_tensor};

const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct FrameEntry {
    kind: FrameKind,
    supervision: Supervision,
    image: String,
    depth: String,
    dynmask: String,
    /// `[fx, fy, cx, cy]`.
    k: [f64; 4],
    /// `[qw, qx, qy, qz, tx, ty, tz]`, camera-to-world.
    pose: [f64; 7],
    time: f64,
}

#[derive(Serialize, Deserialize)]
struct SequenceManifest {
    version: u32,
    n_frames: usize,
    metric_flag: bool,
    mode: SequenceMode,
    frames: Vec<FrameEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_sequence(dir: &Path, sample: &SequenceSample) -> Result<(), SynthError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut entries = Vec::with_capacity(sample.frames.len());
    for (i, f) in sample.frames.iter().enumerate() {
        let sub = format!("frames/{i:03}");
        fs::create_dir_all(dir.join(&sub)).map_err(io_err(dir))?;
        let image = format!("{sub}/image.ptm");
        let depth = format!("{sub}/depth.ptm");
        let dynmask = format!("{sub}/dynmask.ptm");
        write_tensor(&dir.join(&image), &f.image.clone().into_dyn())?;
        write_tensor(&dir.join(&depth), &f.depth.clone().into_dyn())?;
        write_tensor(&dir.join(&dynmask), &f.dynmask.clone().into_dyn())?;
        entries.push(FrameEntry {
            kind: f.kind,
            supervision: f.supervision,
            image,
            depth,
            dynmask,
            k: [f.k.fx, f.k.fy, f.k.cx, f.k.cy],
            pose: [
                f.pose.q[0], f.pose.q[1], f.pose.q[2], f.pose.q[3], f.pose.t[0], f.pose.t[1],
                f.pose.t[2],
            ],
            time: f.time,
        });
    }
    let manifest = SequenceManifest {
        version: VERSION,
        n_frames: sample.frames.len(),
        metric_flag: sample.metric_flag,
        mode: sample.mode,
        frames: entries,
    };
    let path = dir.join("manifest.json");
    let tmp = dir.join("manifest.json.tmp");
    let data = serde_json::to_vec_pretty(&manifest).map_err(|e| SynthError::Format {
        file: path.display().to_string(),
        detail: e.to_string(),
    })?;
    fs::write(&tmp, data).map_err(io_err(&tmp))?;
    fs::rename(&tmp, &path).map_err(io_err(&path))?;
    Ok(())
}

pub fn read_sequence(dir: &Path) -> Result<SequenceSample, SynthError> {
    let mpath = dir.join("manifest.json");
    let data = fs::read(&mpath).map_err(io_err(&mpath))?;
    let manifest: SequenceManifest =
        serde_json::from_slice(&data).map_err(|e| SynthError::Format {
            file: mpath.display().to_string(),
            detail: e.to_string(),
        })?;
    if manifest.version != VERSION {
        return Err(SynthError::UnsupportedVersion {
            version: manifest.version,
        });
    }
    if manifest.frames.len() != manifest.n_frames {
        return Err(SynthError::Format {
            file: mpath.display().to_string(),
            detail: format!(
                "manifest lists {} frames but declares n_frames={}",
                manifest.frames.len(),
                manifest.n_frames
            ),
        });
    }
    let mut frames = Vec::with_capacity(manifest.frames.len());
    for e in &manifest.frames {
        let image = read_tensor::<f32>(&dir.join(&e.image))?;
        let depth = read_tensor::<f32>(&dir.join(&e.depth))?;
        let dynmask = read_tensor::<f32>(&dir.join(&e.dynmask))?;
        let image = image
            .into_dimensionality::<ndarray::Ix3>()
            .map_err(|_| SynthError::Format {
                file: e.image.clone(),
                detail: "image tensor is not 3-d".into(),
            })?;
        let depth = depth.into_dimensionality::<Ix2>().map_err(|_| SynthError::Format {
            file: e.depth.clone(),
            detail: "depth tensor is not 2-d".into(),
        })?;
        let dynmask = dynmask
            .into_dimensionality::<Ix2>()
            .map_err(|_| SynthError::Format {
                file: e.dynmask.clone(),
                detail: "dynamic mask tensor is not 2-d".into(),
            })?;
        let (h, w, _) = image.dim();
        let k = CameraIntrinsics::new(e.k[0], e.k[1], e.k[2], e.k[3], w, h)
            .map_err(SynthError::Geometry)?;
        let pose = Pose::new(
            [e.pose[0], e.pose[1], e.pose[2], e.pose[3]],
            [e.pose[4], e.pose[5], e.pose[6]],
        )
        .map_err(SynthError::Geometry)?;
        frames.push(FrameSample {
            image,
            depth,
            dynmask,
            k,
            pose,
            time: e.time,
            kind: e.kind,
            supervision: e.supervision,
        });
    }
    Ok(SequenceSample {
        frames,
        metric_flag: manifest.metric_flag,
        mode: manifest.mode,
    })
}
