use nalgebra::Vector3;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use super::render::render_frame;
use super::{
    FrameKind, FrameSample, SceneSpec, SequenceMode, SequenceSample, Supervision, SynthError,
    FRAME_DT,
};
use crate::geometry::{depth_to_pointmap, CameraIntrinsics, Pose};

/// Minimum bidirectional frustum overlap for collection mode.
const MIN_OVERLAP: f64 = 0.2;
const MAX_ATTEMPTS: usize = 200;

fn sample_intrinsics(rng: &mut ChaCha12Rng, width: usize, height: usize) -> CameraIntrinsics {
    let f = rng.random_range(0.9..1.4) * width as f64;
    let cx = width as f64 / 2.0 + rng.random_range(-1.0..1.0);
    let cy = height as f64 / 2.0 + rng.random_range(-1.0..1.0);
    CameraIntrinsics::new(f, f, cx, cy, width, height).expect("sampled intrinsics are valid")
}

fn render_sample_frame(
    scene: &SceneSpec,
    k: &CameraIntrinsics,
    pose: &Pose,
    time: f64,
    supervision: Supervision,
) -> Result<FrameSample, SynthError> {
    let out = render_frame(scene, k, pose, time)?;
    Ok(FrameSample {
        image: out.image.mapv(|v| v as f32),
        depth: out.depth.mapv(|v| v as f32),
        dynmask: out.dynmask.mapv(|b| if b { 1.0f32 } else { 0.0 }),
        k: *k,
        pose: *pose,
        time,
        kind: FrameKind::Image,
        supervision,
    })
}

/// Fraction of frame A's valid pixels whose world points land inside frame
/// B's image bounds in front of the camera.
fn overlap_fraction(a: &FrameSample, b: &FrameSample) -> f64 {
    let depth = a.depth.mapv(|v| v as f64);
    let Ok(pm) = depth_to_pointmap(&depth, &a.k) else {
        return 0.0;
    };
    let b_inv = crate::geometry::pose_inverse(&b.pose);
    let rot_a = a.pose.rotation_matrix();
    let t_a = a.pose.translation();
    let mut inside = 0usize;
    let mut valid = 0usize;
    let (h, w) = depth.dim();
    for v in 0..h {
        for u in 0..w {
            if !pm.valid[[v, u]] {
                continue;
            }
            valid += 1;
            let p_world = rot_a
                * Vector3::new(pm.points[[v, u, 0]], pm.points[[v, u, 1]], pm.points[[v, u, 2]])
                + t_a;
            let p_b = b_inv.apply(p_world);
            if let Some((ub, vb)) = b.k.project(p_b) {
                if ub >= 0.0 && ub < b.k.width as f64 && vb >= 0.0 && vb < b.k.height as f64 {
                    inside += 1;
                }
            }
        }
    }
    if valid == 0 {
        0.0
    } else {
        inside as f64 / valid as f64
    }
}

fn orbit_like_trajectory(
    scene: &SceneSpec,
    n_views: usize,
    rng: &mut ChaCha12Rng,
) -> Vec<Pose> {
    let extent = scene.extent;
    let target = Vector3::new(
        rng.random_range(-0.05..0.05) * extent,
        (0.15 + rng.random_range(-0.05..0.05f64).max(-0.1)) * extent,
        rng.random_range(-0.05..0.05) * extent,
    );
    let up = Vector3::new(0.0, 1.0, 0.0);
    if rng.random_bool(0.5) {
        // Orbit with angular jitter.
        let radius = rng.random_range(0.55..0.8) * extent;
        let height = rng.random_range(0.25..0.5) * extent;
        let phi0 = rng.random_range(0.0..std::f64::consts::TAU);
        let dphi = rng.random_range(2.0f64..8.0).to_radians()
            * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        (0..n_views)
            .map(|i| {
                let jitter = rng.random_range(-0.5f64..0.5).to_radians();
                let dh = rng.random_range(-0.02..0.02) * extent;
                let phi = phi0 + dphi * i as f64 + jitter;
                let eye = Vector3::new(radius * phi.cos(), height + dh, radius * phi.sin());
                Pose::look_at(eye, target, up)
            })
            .collect()
    } else {
        // Dolly toward the scene with lateral drift.
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let r0 = rng.random_range(0.7..0.9) * extent;
        let height = rng.random_range(0.3..0.5) * extent;
        let step = rng.random_range(0.01..0.03) * extent;
        let drift = rng.random_range(-0.01..0.01) * extent;
        let dir = Vector3::new(phi.cos(), 0.0, phi.sin());
        let side = Vector3::new(-phi.sin(), 0.0, phi.cos());
        (0..n_views)
            .map(|i| {
                let r = (r0 - step * i as f64).max(0.5 * extent);
                // Per-frame jitter keeps the track off an exact line, which
                // would make Sim(3) trajectory alignment degenerate.
                let jitter = Vector3::new(
                    rng.random_range(-0.008..0.008),
                    rng.random_range(-0.008..0.008),
                    rng.random_range(-0.008..0.008),
                ) * extent;
                let eye =
                    dir * r + side * (drift * i as f64) + Vector3::new(0.0, height, 0.0) + jitter;
                Pose::look_at(eye, target, up)
            })
            .collect()
    }
}

/// Sample an annotated sequence from a scene.
///
/// Video mode renders a smooth orbit or dolly trajectory in temporal order;
/// collection mode (static scenes only) samples viewpoints whose pairwise
/// frustum overlap is at least 20% and shuffles them. Single-view samples
/// are marked for the reset-per-view training path.
pub fn sample_sequence(
    scene: &SceneSpec,
    n_views: usize,
    mode: SequenceMode,
    width: usize,
    height: usize,
    rng: &mut ChaCha12Rng,
) -> Result<SequenceSample, SynthError> {
    assert!(n_views >= 1, "n_views must be positive");
    let supervision = if n_views == 1 {
        Supervision::SingleView
    } else {
        Supervision::Full
    };
    let k = sample_intrinsics(rng, width, height);

    let frames = match mode {
        SequenceMode::Video => {
            let mut frames = Vec::with_capacity(n_views);
            let mut attempt = 0;
            'outer: loop {
                attempt += 1;
                let poses = orbit_like_trajectory(scene, n_views, rng);
                frames.clear();
                for (i, pose) in poses.iter().enumerate() {
                    let time = i as f64 * FRAME_DT;
                    match render_sample_frame(scene, &k, pose, time, supervision) {
                        Ok(f) => frames.push(f),
                        Err(SynthError::CameraInside { .. }) if attempt < MAX_ATTEMPTS => {
                            continue 'outer;
                        }
                        Err(e) => return Err(e),
                    }
                }
                break frames;
            }
        }
        SequenceMode::Collection => {
            if scene.dynamic.is_some() {
                return Err(SynthError::CollectionDynamic);
            }
            let extent = scene.extent;
            let up = Vector3::new(0.0, 1.0, 0.0);
            let mut accepted: Vec<FrameSample> = Vec::new();
            let mut attempts = 0;
            while accepted.len() < n_views {
                attempts += 1;
                if attempts > MAX_ATTEMPTS {
                    return Err(SynthError::SamplingExhausted {
                        wanted: n_views,
                        attempts,
                    });
                }
                let r = rng.random_range(0.55..0.9) * extent;
                let az = rng.random_range(0.0..std::f64::consts::TAU);
                let el = rng.random_range(15.0f64..55.0).to_radians();
                let eye = Vector3::new(
                    r * el.cos() * az.cos(),
                    r * el.sin(),
                    r * el.cos() * az.sin(),
                );
                let target = Vector3::new(
                    rng.random_range(-0.05..0.05) * extent,
                    0.1 * extent,
                    rng.random_range(-0.05..0.05) * extent,
                );
                let pose = Pose::look_at(eye, target, up);
                let cand = match render_sample_frame(scene, &k, &pose, 0.0, supervision) {
                    Ok(f) => f,
                    Err(SynthError::CameraInside { .. }) => continue,
                    Err(e) => return Err(e),
                };
                let ok = accepted.iter().all(|f| {
                    overlap_fraction(&cand, f) >= MIN_OVERLAP
                        && overlap_fraction(f, &cand) >= MIN_OVERLAP
                });
                if ok {
                    accepted.push(cand);
                }
            }
            accepted.shuffle(rng);
            accepted
        }
    };

    Ok(SequenceSample {
        frames,
        metric_flag: true,
        mode,
    })
}

/// Replace each non-first frame by its raymap query with probability `p`.
/// The image stays as color supervision; the raymap itself is derived from
/// the frame's intrinsics and pose when the batch is assembled. Requires
/// metric-scale annotations.
pub fn mask_with_raymaps(
    mut sample: SequenceSample,
    p: f64,
    rng: &mut ChaCha12Rng,
) -> Result<SequenceSample, SynthError> {
    if !sample.metric_flag {
        return Err(SynthError::NonMetricMasking);
    }
    for frame in sample.frames.iter_mut().skip(1) {
        if rng.random::<f64>() < p {
            frame.kind = FrameKind::Raymap;
        }
    }
    Ok(sample)
}

/// Turn a sequence into camera-only supervision: depth and dynamic masks
/// are dropped, only poses (and images) remain.
pub fn drop_depth_supervision(mut sample: SequenceSample) -> SequenceSample {
    for frame in sample.frames.iter_mut() {
        frame.depth = Array2::zeros(frame.depth.dim());
        frame.dynmask = Array2::zeros(frame.dynmask.dim());
        frame.supervision = Supervision::CameraOnly;
    }
    sample
}
