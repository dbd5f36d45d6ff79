//! Camera models, raymaps, pointmaps and similarity alignment.
//!
//! Pure reference math shared by data generation, supervision and
//! evaluation. The model itself never sees these types except as training
//! targets. Conventions, fixed once: quaternions are `(w, x, y, z)` with the
//! Hamilton product and represent camera-to-world transforms; pixel centers
//! sit at integer coordinates (no half-pixel offset); raymap directions are
//! unit vectors; an invalid depth is exactly `0.0`.

mod pose;
#[cfg(test)]
mod tests;
mod raycam;
mod sim3;

pub use pose::{pose_compose, pose_inverse, Pose, UNIT_QUAT_TOL};
pub use raycam::{camera_to_raymap, raymap_to_camera};
pub use sim3::{umeyama_sim3, Sim3};

use nalgebra::Vector3;
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("invalid intrinsics: fx={fx}, fy={fy}, cx={cx}, cy={cy}, {width}x{height}")]
    InvalidIntrinsics {
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    },
    #[error("dimension mismatch: data is {got:?}, camera expects {expected:?}")]
    DimensionMismatch {
        got: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("quaternion norm {norm} is not unit within tolerance")]
    NonUnitQuaternion { norm: f64 },
    #[error("pointmap is in the {got:?} frame, expected {expected:?}")]
    WrongFrame { got: Frame, expected: Frame },
    #[error("degenerate raymap: not consistent with a single pinhole camera ({detail})")]
    DegenerateRaymap { detail: String },
    #[error("degenerate configuration: {detail}")]
    DegenerateConfiguration { detail: String },
    #[error("direction norm {norm} is not unit within tolerance")]
    NonUnitDirection { norm: f64 },
}

/// Pinhole camera intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        let ok = fx > 0.0
            && fy > 0.0
            && cx > 0.0
            && cx < width as f64
            && cy > 0.0
            && cy < height as f64;
        if !ok {
            return Err(GeometryError::InvalidIntrinsics {
                fx,
                fy,
                cx,
                cy,
                width,
                height,
            });
        }
        Ok(CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Unnormalized camera-frame ray through pixel `(u, v)`.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Perspective projection of a camera-frame point; `None` behind camera.
    pub fn project(&self, p: Vector3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }
}

/// Coordinate frame of a pointmap. `Camera` is the capturing camera's own
/// frame (the "self" frame); `World` is the frame of the first image of the
/// stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    Camera,
    World,
}

/// Per-pixel 3D points (meters) with a validity mask; invalid pixels carry
/// exact zeros.
#[derive(Clone, Debug)]
pub struct Pointmap {
    /// `(H, W, 3)` points in meters.
    pub points: Array3<f64>,
    pub frame: Frame,
    /// `(H, W)` validity.
    pub valid: Array2<bool>,
}

impl Pointmap {
    pub fn height(&self) -> usize {
        self.points.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.points.shape()[1]
    }

    /// Valid points flattened row-major.
    pub fn valid_points(&self) -> Vec<Vector3<f64>> {
        let (h, w) = (self.height(), self.width());
        let mut out = Vec::new();
        for v in 0..h {
            for u in 0..w {
                if self.valid[[v, u]] {
                    out.push(Vector3::new(
                        self.points[[v, u, 0]],
                        self.points[[v, u, 1]],
                        self.points[[v, u, 2]],
                    ));
                }
            }
        }
        out
    }
}

/// Per-pixel ray origins and unit directions in the world frame. For a
/// pinhole camera every origin equals the camera center; that property is
/// checked where it matters ([`raymap_to_camera`]) rather than at
/// construction so that malformed raymaps can be represented and rejected.
#[derive(Clone, Debug)]
pub struct Raymap {
    /// `(H, W, 3)` origins, meters.
    pub origins: Array3<f64>,
    /// `(H, W, 3)` unit directions.
    pub directions: Array3<f64>,
}

impl Raymap {
    pub fn height(&self) -> usize {
        self.origins.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.origins.shape()[1]
    }

    /// Check the unit-direction invariant.
    pub fn validate_directions(&self, tol: f64) -> Result<(), GeometryError> {
        for d in self.directions.rows() {
            let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if (norm - 1.0).abs() > tol {
                return Err(GeometryError::NonUnitDirection { norm });
            }
        }
        Ok(())
    }
}

/// Back-project a depth map to a camera-frame pointmap. Depth is the z
/// coordinate along the optical axis; zero depth marks an invalid pixel,
/// which stays exactly zero in the output.
pub fn depth_to_pointmap(
    depth: &Array2<f64>,
    k: &CameraIntrinsics,
) -> Result<Pointmap, GeometryError> {
    let (h, w) = depth.dim();
    if h != k.height || w != k.width {
        return Err(GeometryError::DimensionMismatch {
            got: vec![h, w],
            expected: vec![k.height, k.width],
        });
    }
    let mut points = Array3::<f64>::zeros((h, w, 3));
    let mut valid = Array2::<bool>::from_elem((h, w), false);
    for v in 0..h {
        for u in 0..w {
            let d = depth[[v, u]];
            if d > 0.0 {
                let ray = k.pixel_ray(u as f64, v as f64);
                points[[v, u, 0]] = d * ray.x;
                points[[v, u, 1]] = d * ray.y;
                points[[v, u, 2]] = d;
                valid[[v, u]] = true;
            }
        }
    }
    Ok(Pointmap {
        points,
        frame: Frame::Camera,
        valid,
    })
}

/// Move a camera-frame pointmap to the world frame with a camera-to-world
/// pose. Valid points map through `R p + t`; invalid pixels stay zero.
pub fn transform_pointmap(pm: &Pointmap, pose: &Pose) -> Result<Pointmap, GeometryError> {
    if pm.frame != Frame::Camera {
        return Err(GeometryError::WrongFrame {
            got: pm.frame,
            expected: Frame::Camera,
        });
    }
    let (h, w) = pm.valid.dim();
    let rot = pose.rotation_matrix();
    let t = pose.translation();
    let mut points = Array3::<f64>::zeros((h, w, 3));
    for v in 0..h {
        for u in 0..w {
            if pm.valid[[v, u]] {
                let p = Vector3::new(
                    pm.points[[v, u, 0]],
                    pm.points[[v, u, 1]],
                    pm.points[[v, u, 2]],
                );
                let q = rot * p + t;
                points[[v, u, 0]] = q.x;
                points[[v, u, 1]] = q.y;
                points[[v, u, 2]] = q.z;
            }
        }
    }
    Ok(Pointmap {
        points,
        frame: Frame::World,
        valid: pm.valid.clone(),
    })
}
