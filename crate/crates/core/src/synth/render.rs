use nalgebra::Vector3;
use ndarray::{Array2, Array3};

use super::{Primitive, SceneSpec, Shape, SynthError};
use crate::geometry::{CameraIntrinsics, Pose};

const EPS: f64 = 1e-9;

/// Direction from surfaces toward the single light.
fn light_dir() -> Vector3<f64> {
    Vector3::new(0.4, 1.0, 0.25).normalize()
}

const BACKGROUND: [f64; 3] = [0.62, 0.74, 0.92];
const AMBIENT: f64 = 0.25;

struct Hit {
    t: f64,
    normal: Vector3<f64>,
    albedo: [f64; 3],
    dynamic: bool,
}

fn intersect_sphere(o: Vector3<f64>, d: Vector3<f64>, c: Vector3<f64>, r: f64) -> Option<f64> {
    let oc = o - c;
    let b = oc.dot(&d);
    let disc = b * b - (oc.norm_squared() - r * r);
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = -b - sq;
    if t0 > EPS {
        return Some(t0);
    }
    let t1 = -b + sq;
    if t1 > EPS {
        return Some(t1);
    }
    None
}

fn intersect_box(
    o: Vector3<f64>,
    d: Vector3<f64>,
    c: Vector3<f64>,
    half: [f64; 3],
) -> Option<(f64, Vector3<f64>)> {
    let mut t_enter = f64::NEG_INFINITY;
    let mut t_exit = f64::INFINITY;
    let mut axis = 0usize;
    let mut sign = 1.0;
    for i in 0..3 {
        let oi = o[i] - c[i];
        if d[i].abs() < 1e-15 {
            if oi.abs() > half[i] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[i];
        let mut t0 = (-half[i] - oi) * inv;
        let mut t1 = (half[i] - oi) * inv;
        let mut s = -1.0;
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
            s = 1.0;
        }
        if t0 > t_enter {
            t_enter = t0;
            axis = i;
            sign = s;
        }
        t_exit = t_exit.min(t1);
        if t_enter > t_exit {
            return None;
        }
    }
    if t_enter > EPS && t_enter <= t_exit {
        let mut n = Vector3::zeros();
        n[axis] = sign;
        Some((t_enter, n))
    } else {
        None
    }
}

fn intersect_primitive(
    o: Vector3<f64>,
    d: Vector3<f64>,
    p: &Primitive,
) -> Option<(f64, Vector3<f64>)> {
    match p.shape {
        Shape::Sphere { radius } => intersect_sphere(o, d, p.center_v(), radius).map(|t| {
            let n = (o + t * d - p.center_v()) / radius;
            (t, n)
        }),
        Shape::Box { half } => intersect_box(o, d, p.center_v(), half),
    }
}

fn inside_primitive(eye: Vector3<f64>, p: &Primitive) -> bool {
    match p.shape {
        Shape::Sphere { radius } => (eye - p.center_v()).norm() <= radius + EPS,
        Shape::Box { half } => {
            let d = eye - p.center_v();
            (0..3).all(|i| d[i].abs() <= half[i] + EPS)
        }
    }
}

/// True when the camera center sits inside any solid of the scene at `t`.
pub fn camera_inside_solid(scene: &SceneSpec, eye: Vector3<f64>, t: f64) -> bool {
    scene.statics.iter().any(|p| inside_primitive(eye, p))
        || scene
            .dynamic
            .as_ref()
            .is_some_and(|d| inside_primitive(eye, &d.at(t)))
}

/// Distance along a single ray to the nearest surface of the scene at time
/// `t`, if any. Same intersection math as `render_frame`, exposed for
/// consistency oracles and ground-truth queries at arbitrary rays.
pub fn trace_ray(
    scene: &SceneSpec,
    origin: Vector3<f64>,
    dir: Vector3<f64>,
    t: f64,
) -> Option<f64> {
    let mut best: Option<f64> = None;
    let mut consider = |hit: Option<f64>| {
        if let Some(t) = hit {
            if best.is_none_or(|b| t < b) {
                best = Some(t);
            }
        }
    };
    if dir.y.abs() > 1e-15 {
        let tg = -origin.y / dir.y;
        if tg > EPS {
            let hit = origin + tg * dir;
            if hit.x * hit.x + hit.z * hit.z <= scene.ground_radius * scene.ground_radius {
                consider(Some(tg));
            }
        }
    }
    for p in &scene.statics {
        consider(intersect_primitive(origin, dir, p).map(|(t, _)| t));
    }
    if let Some(d) = &scene.dynamic {
        consider(intersect_primitive(origin, dir, &d.at(t)).map(|(t, _)| t));
    }
    best
}

/// Output of one rendered view.
pub struct RenderedFrame {
    /// `(H, W, 3)` in `[0, 1]`.
    pub image: Array3<f64>,
    /// `(H, W)` camera-frame z depth; 0 marks a miss.
    pub depth: Array2<f64>,
    /// `(H, W)` true where the nearest hit belongs to the dynamic primitive.
    pub dynmask: Array2<bool>,
}

/// Ray-cast the scene at time `t`. Depth is the z component of the hit in
/// the camera frame; miss pixels get zero depth and the background color.
pub fn render_frame(
    scene: &SceneSpec,
    k: &CameraIntrinsics,
    pose: &Pose,
    t: f64,
) -> Result<RenderedFrame, SynthError> {
    let eye = pose.translation();
    if camera_inside_solid(scene, eye, t) {
        return Err(SynthError::CameraInside {
            eye: [eye.x, eye.y, eye.z],
        });
    }
    let (h, w) = (k.height, k.width);
    let rot = pose.rotation_matrix();
    let z_cam = rot * Vector3::new(0.0, 0.0, 1.0);
    let dynamic = scene.dynamic.as_ref().map(|d| d.at(t));
    let light = light_dir();

    let mut image = Array3::<f64>::zeros((h, w, 3));
    let mut depth = Array2::<f64>::zeros((h, w));
    let mut dynmask = Array2::<bool>::from_elem((h, w), false);

    for v in 0..h {
        for u in 0..w {
            let d = (rot * k.pixel_ray(u as f64, v as f64)).normalize();
            let mut best: Option<Hit> = None;
            let mut consider = |hit: Option<(f64, Vector3<f64>)>, albedo: [f64; 3], dynamic: bool| {
                if let Some((t, normal)) = hit {
                    if best.as_ref().is_none_or(|b| t < b.t) {
                        best = Some(Hit {
                            t,
                            normal,
                            albedo,
                            dynamic,
                        });
                    }
                }
            };

            // Ground disk at y = 0.
            if d.y.abs() > 1e-15 {
                let t_ground = -eye.y / d.y;
                if t_ground > EPS {
                    let hit = eye + t_ground * d;
                    if hit.x * hit.x + hit.z * hit.z <= scene.ground_radius * scene.ground_radius {
                        consider(
                            Some((t_ground, Vector3::new(0.0, 1.0, 0.0))),
                            scene.ground_albedo,
                            false,
                        );
                    }
                }
            }
            for p in &scene.statics {
                consider(intersect_primitive(eye, d, p), p.albedo, false);
            }
            if let Some(p) = &dynamic {
                consider(intersect_primitive(eye, d, p), p.albedo, true);
            }

            match best {
                Some(hit) => {
                    let diffuse = hit.normal.dot(&light).max(0.0);
                    let shade = AMBIENT + (1.0 - AMBIENT) * diffuse;
                    for c in 0..3 {
                        image[[v, u, c]] = (hit.albedo[c] * shade).clamp(0.0, 1.0);
                    }
                    depth[[v, u]] = hit.t * d.dot(&z_cam);
                    dynmask[[v, u]] = hit.dynamic;
                }
                None => {
                    for c in 0..3 {
                        image[[v, u, c]] = BACKGROUND[c];
                    }
                }
            }
        }
    }
    Ok(RenderedFrame {
        image,
        depth,
        dynmask,
    })
}
