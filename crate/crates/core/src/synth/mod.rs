//! Procedural scenes and fully annotated training sequences.
//!
//! Scenes are a handful of analytic primitives (spheres, axis-aligned
//! boxes) resting on a finite ground disk in a y-up world, one optional
//! dynamic primitive moving linearly. Rendering is exact ray casting with
//! Lambertian shading from a single directional light, so depth maps,
//! masks and poses are consistent to machine precision — the supervision
//! mirrors what the evaluation protocols assume.

mod render;
mod sample;
mod scene;
mod seqio;

pub use render::{camera_inside_solid, render_frame, trace_ray, RenderedFrame};
pub use sample::{drop_depth_supervision, mask_with_raymaps, sample_sequence};
pub use scene::generate_scene;
pub use seqio::{read_sequence, write_sequence};

use nalgebra::Vector3;
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraIntrinsics, GeometryError, Pose};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("camera at {eye:?} is inside a primitive")]
    CameraInside { eye: [f64; 3] },
    #[error("collection mode requires a static scene")]
    CollectionDynamic,
    #[error("could not sample {wanted} overlapping views after {attempts} attempts")]
    SamplingExhausted { wanted: usize, attempts: usize },
    #[error("raymap masking requires metric-scale annotations")]
    NonMetricMasking,
    #[error("{file}: {detail}")]
    Format { file: String, detail: String },
    #[error("unsupported sequence format version {version}")]
    UnsupportedVersion { version: u32 },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Container(#[from] crate::tensor::ContainerError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Shape of one primitive, centered at the primitive's position.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    Sphere { radius: f64 },
    Box { half: [f64; 3] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub center: [f64; 3],
    pub shape: Shape,
    pub albedo: [f64; 3],
}

impl Primitive {
    pub fn center_v(&self) -> Vector3<f64> {
        Vector3::new(self.center[0], self.center[1], self.center[2])
    }
}

/// A primitive translating linearly: center(t) = center + velocity * t.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicPrimitive {
    pub primitive: Primitive,
    /// Meters per second.
    pub velocity: [f64; 3],
}

impl DynamicPrimitive {
    pub fn at(&self, t: f64) -> Primitive {
        let mut p = self.primitive.clone();
        for i in 0..3 {
            p.center[i] += self.velocity[i] * t;
        }
        p
    }
}

/// A procedural scene: a ground disk at y = 0 plus static primitives and at
/// most one dynamic primitive, everything within `extent` meters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// Radius of the ground disk.
    pub ground_radius: f64,
    pub ground_albedo: [f64; 3],
    pub statics: Vec<Primitive>,
    pub dynamic: Option<DynamicPrimitive>,
    /// Scene diameter in meters.
    pub extent: f64,
}

/// Longest supported sequence duration; dynamic primitives are guaranteed
/// to stay inside the scene extent up to this time.
pub const MAX_SEQUENCE_SECONDS: f64 = 4.0;

/// Seconds between consecutive video frames.
pub const FRAME_DT: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    Image,
    Raymap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Supervision {
    Full,
    CameraOnly,
    SingleView,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceMode {
    Video,
    Collection,
}

/// One annotated frame. Poses are camera-to-world in scene coordinates;
/// consumers derive the first-frame-relative convention they need.
#[derive(Clone, Debug)]
pub struct FrameSample {
    /// `(H, W, 3)` RGB in `[0, 1]`.
    pub image: Array3<f32>,
    /// `(H, W)` z-depth in meters, 0 = invalid.
    pub depth: Array2<f32>,
    /// `(H, W)` 1.0 where the nearest hit is the dynamic primitive.
    pub dynmask: Array2<f32>,
    pub k: CameraIntrinsics,
    pub pose: Pose,
    /// Scene time of this frame in seconds.
    pub time: f64,
    pub kind: FrameKind,
    pub supervision: Supervision,
}

/// A training/evaluation unit of N views.
#[derive(Clone, Debug)]
pub struct SequenceSample {
    pub frames: Vec<FrameSample>,
    /// Annotations are in known metric units (always true for generated
    /// data; cleared only by tests exercising the non-metric path).
    pub metric_flag: bool,
    pub mode: SequenceMode,
}

impl SequenceSample {
    pub fn height(&self) -> usize {
        self.frames[0].image.dim().0
    }

    pub fn width(&self) -> usize {
        self.frames[0].image.dim().1
    }
}
