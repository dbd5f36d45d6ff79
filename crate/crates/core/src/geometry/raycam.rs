use nalgebra::{DMatrix, Matrix3, Vector3};
use ndarray::Array3;

use super::{CameraIntrinsics, GeometryError, Pose, Raymap};

/// Build the raymap of a pinhole camera: all origins at the camera center,
/// unit directions through integer pixel centers, world frame.
pub fn camera_to_raymap(k: &CameraIntrinsics, pose: &Pose) -> Raymap {
    let (h, w) = (k.height, k.width);
    let rot = pose.rotation_matrix();
    let t = pose.translation();
    let mut origins = Array3::<f64>::zeros((h, w, 3));
    let mut directions = Array3::<f64>::zeros((h, w, 3));
    for v in 0..h {
        for u in 0..w {
            let d = (rot * k.pixel_ray(u as f64, v as f64)).normalize();
            origins[[v, u, 0]] = t.x;
            origins[[v, u, 1]] = t.y;
            origins[[v, u, 2]] = t.z;
            directions[[v, u, 0]] = d.x;
            directions[[v, u, 1]] = d.y;
            directions[[v, u, 2]] = d.z;
        }
    }
    Raymap { origins, directions }
}

/// Maximum origin spread accepted as "a single camera center".
const ORIGIN_TOL: f64 = 1e-6;
/// Maximum per-channel reconstruction residual accepted as pinhole.
const RESIDUAL_TOL: f64 = 1e-3;

/// Recover the pinhole camera that produced a raymap.
///
/// The camera center is the shared ray origin. Directions satisfy
/// `d(u,v) ∝ D·(u,v,1)` with `D = R·K⁻¹`, so `D` is estimated (up to scale)
/// by least squares on the direction ratios — each pixel contributes the
/// constraint `d × (D p) = 0` — and split into `R` and `K` by QR
/// factorization. The rotation is then re-fit by orthogonal Procrustes on
/// the four image-corner rays and the center ray against the canonical
/// frustum of the recovered intrinsics. A raymap whose rays cannot be
/// reproduced within `1e-3` per channel is rejected as degenerate.
pub fn raymap_to_camera(rm: &Raymap) -> Result<(CameraIntrinsics, Pose), GeometryError> {
    let (h, w) = (rm.height(), rm.width());
    if h < 2 || w < 2 {
        return Err(GeometryError::DegenerateRaymap {
            detail: format!("raymap too small ({h}x{w})"),
        });
    }

    // Shared origin.
    let n = (h * w) as f64;
    let mut center = Vector3::zeros();
    for v in 0..h {
        for u in 0..w {
            center += Vector3::new(
                rm.origins[[v, u, 0]],
                rm.origins[[v, u, 1]],
                rm.origins[[v, u, 2]],
            );
        }
    }
    center /= n;
    for v in 0..h {
        for u in 0..w {
            let o = Vector3::new(
                rm.origins[[v, u, 0]],
                rm.origins[[v, u, 1]],
                rm.origins[[v, u, 2]],
            );
            if (o - center).norm() > ORIGIN_TOL {
                return Err(GeometryError::DegenerateRaymap {
                    detail: format!(
                        "origins are not a single camera center (spread {:.3e})",
                        (o - center).norm()
                    ),
                });
            }
        }
    }

    // Least squares for D (9 unknowns, row-major) from d × (D p) = 0.
    let mut m = DMatrix::<f64>::zeros(3 * h * w, 9);
    let mut row = 0;
    for v in 0..h {
        for u in 0..w {
            let d = Vector3::new(
                rm.directions[[v, u, 0]],
                rm.directions[[v, u, 1]],
                rm.directions[[v, u, 2]],
            );
            let p = [u as f64, v as f64, 1.0];
            let cross = Matrix3::new(0.0, -d.z, d.y, d.z, 0.0, -d.x, -d.y, d.x, 0.0);
            for i in 0..3 {
                for kk in 0..3 {
                    for j in 0..3 {
                        m[(row + i, 3 * kk + j)] = cross[(i, kk)] * p[j];
                    }
                }
            }
            row += 3;
        }
    }
    let svd = m.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    // Right singular vector of the smallest singular value.
    let min_idx = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let theta = v_t.row(min_idx);
    let mut d_mat = Matrix3::new(
        theta[0], theta[1], theta[2], theta[3], theta[4], theta[5], theta[6], theta[7], theta[8],
    );

    // Fix the global sign so D p points along the observed directions.
    let mut dot_sum = 0.0;
    for v in 0..h {
        for u in 0..w {
            let d = Vector3::new(
                rm.directions[[v, u, 0]],
                rm.directions[[v, u, 1]],
                rm.directions[[v, u, 2]],
            );
            let dp = d_mat * Vector3::new(u as f64, v as f64, 1.0);
            dot_sum += d.dot(&dp);
        }
    }
    if dot_sum < 0.0 {
        d_mat = -d_mat;
    }

    // D = Q * U with Q orthogonal and U = sigma * K^{-1} upper triangular
    // with positive diagonal.
    let qr = d_mat.qr();
    let mut q = qr.q();
    let mut u_tri = qr.r();
    for i in 0..3 {
        if u_tri[(i, i)] < 0.0 {
            for j in 0..3 {
                u_tri[(i, j)] = -u_tri[(i, j)];
                q[(j, i)] = -q[(j, i)];
            }
        }
    }
    if q.determinant() < 0.0 {
        return Err(GeometryError::DegenerateRaymap {
            detail: "left-handed ray bundle".into(),
        });
    }
    let sigma = u_tri[(2, 2)];
    if sigma <= 0.0 || u_tri[(0, 0)] <= 0.0 || u_tri[(1, 1)] <= 0.0 {
        return Err(GeometryError::DegenerateRaymap {
            detail: "non-positive focal solution".into(),
        });
    }
    let fx = sigma / u_tri[(0, 0)];
    let fy = sigma / u_tri[(1, 1)];
    let cx = -u_tri[(0, 2)] * fx / sigma;
    let cy = -u_tri[(1, 2)] * fy / sigma;
    let k = CameraIntrinsics::new(fx, fy, cx, cy, w, h).map_err(|_| {
        GeometryError::DegenerateRaymap {
            detail: format!("recovered intrinsics out of range (fx={fx:.3}, fy={fy:.3}, cx={cx:.3}, cy={cy:.3})"),
        }
    })?;

    // Procrustes refit of the rotation on corner + center rays.
    let probes = [
        (0usize, 0usize),
        (w - 1, 0),
        (0, h - 1),
        (w - 1, h - 1),
        (w / 2, h / 2),
    ];
    let mut cov = Matrix3::zeros();
    for &(u, v) in &probes {
        let canon = k.pixel_ray(u as f64, v as f64).normalize();
        let d = Vector3::new(
            rm.directions[[v, u, 0]],
            rm.directions[[v, u, 1]],
            rm.directions[[v, u, 2]],
        );
        cov += d * canon.transpose();
    }
    let svd = cov.svd(true, true);
    let uu = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let det = (uu * vt).determinant();
    let s = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, det.signum()));
    let rot = uu * s * vt;
    let pose = Pose::from_rotation(rot, center);

    // Round-trip residual gate.
    let rebuilt = camera_to_raymap(&k, &pose);
    let mut residual: f64 = 0.0;
    for v in 0..h {
        for u in 0..w {
            for c in 0..3 {
                residual = residual
                    .max((rebuilt.origins[[v, u, c]] - rm.origins[[v, u, c]]).abs())
                    .max((rebuilt.directions[[v, u, c]] - rm.directions[[v, u, c]]).abs());
            }
        }
    }
    if residual > RESIDUAL_TOL {
        return Err(GeometryError::DegenerateRaymap {
            detail: format!("reconstruction residual {residual:.3e} exceeds {RESIDUAL_TOL:.0e}"),
        });
    }
    Ok((k, pose))
}
