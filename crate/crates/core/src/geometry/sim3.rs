use nalgebra::{Matrix3, Vector3};

use super::GeometryError;

/// Similarity transform `p ↦ s·R·p + t` with positive scale.
#[derive(Clone, Debug)]
pub struct Sim3 {
    pub s: f64,
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
}

impl Sim3 {
    pub fn identity() -> Sim3 {
        Sim3 {
            s: 1.0,
            r: Matrix3::identity(),
            t: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.s * (self.r * p) + self.t
    }
}

/// Closed-form least-squares similarity alignment of two point sets:
/// `argmin_{s,R,t} Σ ‖s·R·srcᵢ + t − dstᵢ‖²`.
///
/// Needs at least 3 non-collinear points; a covariance whose second singular
/// value vanishes leaves the rotation underdetermined and is rejected.
pub fn umeyama_sim3(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
) -> Result<Sim3, GeometryError> {
    if src.len() != dst.len() {
        return Err(GeometryError::DegenerateConfiguration {
            detail: format!("point counts differ: {} vs {}", src.len(), dst.len()),
        });
    }
    let n = src.len();
    if n < 3 {
        return Err(GeometryError::DegenerateConfiguration {
            detail: format!("need at least 3 points, got {n}"),
        });
    }
    let nf = n as f64;
    let mu_s: Vector3<f64> = src.iter().sum::<Vector3<f64>>() / nf;
    let mu_d: Vector3<f64> = dst.iter().sum::<Vector3<f64>>() / nf;

    let mut cov = Matrix3::<f64>::zeros();
    let mut var_src = 0.0;
    for i in 0..n {
        let sc = src[i] - mu_s;
        let dc = dst[i] - mu_d;
        cov += dc * sc.transpose();
        var_src += sc.norm_squared();
    }
    cov /= nf;
    var_src /= nf;
    if var_src <= 0.0 {
        return Err(GeometryError::DegenerateConfiguration {
            detail: "source points are coincident".into(),
        });
    }

    let svd = cov.svd(true, true);
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let d = svd.singular_values;
    if d[1] <= 1e-12 * d[0].max(1e-300) {
        return Err(GeometryError::DegenerateConfiguration {
            detail: "rank-deficient covariance (collinear points)".into(),
        });
    }
    let det_sign = (u * v_t).determinant().signum();
    let s_diag = Vector3::new(1.0, 1.0, det_sign);
    let r = u * Matrix3::from_diagonal(&s_diag) * v_t;
    let scale = (d[0] + d[1] + det_sign * d[2]) / var_src;
    if scale <= 0.0 {
        return Err(GeometryError::DegenerateConfiguration {
            detail: format!("non-positive scale {scale}"),
        });
    }
    let t = mu_d - scale * (r * mu_s);
    Ok(Sim3 { s: scale, r, t })
}
