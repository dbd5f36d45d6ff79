use clap::Args;
use nalgebra::Vector3;
use ndarray::{Array3, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use streampoint_core::geometry::{
    camera_to_raymap, pose_compose, pose_inverse, raymap_to_camera, umeyama_sim3,
    CameraIntrinsics, Pose,
};
use streampoint_core::model::{Model, ModelConfig, ModelInput};
use streampoint_core::synth::{generate_scene, mask_with_raymaps, sample_sequence, FrameKind,
    SequenceMode};
use streampoint_core::tensor::{gradient_check, rope_apply, tensor_bytes, tensor_from_bytes, Graph};

use crate::errors::AppError;

#[derive(Args)]
pub struct SelftestArgs {}

type Check = (&'static str, fn() -> Result<(), String>);

fn geometry_round_trip() -> Result<(), String> {
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    for i in 0..5 {
        let k = CameraIntrinsics::new(
            rng.random_range(25.0..150.0),
            rng.random_range(25.0..150.0),
            16.0 + rng.random_range(-4.0..4.0),
            16.0 + rng.random_range(-4.0..4.0),
            32,
            32,
        )
        .map_err(|e| e.to_string())?;
        let pose = Pose::look_at(
            Vector3::new(rng.random_range(-4.0..4.0), rng.random_range(0.5..4.0), rng.random_range(-4.0..4.0)),
            Vector3::zeros(),
            Vector3::new(0.0, 1.0, 0.0),
        );
        let rm = camera_to_raymap(&k, &pose);
        let (k2, p2) = raymap_to_camera(&rm).map_err(|e| e.to_string())?;
        let rel = ((k2.fx - k.fx) / k.fx).abs().max(((k2.fy - k.fy) / k.fy).abs());
        if rel > 1e-9 {
            return Err(format!("case {i}: focal relative error {rel:.3e}"));
        }
        if p2.rotation_angle_to(&pose) > 1e-6 {
            return Err(format!("case {i}: rotation error {:.3e} deg", p2.rotation_angle_to(&pose)));
        }
    }
    Ok(())
}

fn pose_algebra() -> Result<(), String> {
    let p = Pose::look_at(
        Vector3::new(1.0, 2.0, 3.0),
        Vector3::zeros(),
        Vector3::new(0.0, 1.0, 0.0),
    );
    let c = pose_compose(&p, &pose_inverse(&p));
    if (c.q[0].abs() - 1.0).abs() > 1e-12 || c.translation().norm() > 1e-12 {
        return Err("compose(p, inverse(p)) deviates from identity".to_string());
    }
    Ok(())
}

fn umeyama_recovery() -> Result<(), String> {
    let mut rng = ChaCha12Rng::seed_from_u64(2);
    for i in 0..20 {
        let src: Vec<Vector3<f64>> = (0..10)
            .map(|_| Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
            .collect();
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
        let rot = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        let s = rng.random_range(0.3..3.0);
        let t = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let dst: Vec<Vector3<f64>> = src.iter().map(|p| s * (rot * p) + t).collect();
        let sim = umeyama_sim3(&src, &dst).map_err(|e| e.to_string())?;
        let residual: f64 = src.iter().zip(dst.iter()).map(|(a, b)| (sim.apply(*a) - b).norm_squared()).sum();
        if residual > 1e-9 {
            return Err(format!("case {i}: residual {residual:.3e}"));
        }
    }
    Ok(())
}

fn substrate_gradients() -> Result<(), String> {
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let x = ArrayD::from_shape_vec(IxDyn(&[3, 6]), (0..18).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let w = ArrayD::from_shape_vec(IxDyn(&[6, 4]), (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let err = gradient_check(&[x, w], |g, v| {
        let m = g.matmul(v[0], v[1])?;
        let s = g.softmax(m)?;
        let e = g.gelu(s)?;
        g.sum_all(e)
    })
    .map_err(|e| e.to_string())?;
    if err > 1e-6 {
        return Err(format!("gradient error {err:.3e}"));
    }
    Ok(())
}

fn softmax_and_rope_invariants() -> Result<(), String> {
    let mut rng = ChaCha12Rng::seed_from_u64(4);
    let mut g = Graph::<f64>::new();
    let data: Vec<f64> = (0..40).map(|_| rng.random_range(-3.0..3.0)).collect();
    let x = g.constant(ArrayD::from_shape_vec(IxDyn(&[5, 8]), data).unwrap());
    let s = g.softmax(x).map_err(|e| e.to_string())?;
    for row in g.value(s).rows() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-12 || row.iter().any(|&v| v <= 0.0) {
            return Err("softmax row invariant violated".to_string());
        }
    }
    let positions: Vec<f64> = (0..5).map(|i| i as f64 * 3.7).collect();
    let r = rope_apply(&mut g, x, &positions).map_err(|e| e.to_string())?;
    for (a, b) in g.value(x).rows().into_iter().zip(g.value(r).rows()) {
        let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (na - nb).abs() > 1e-9 {
            return Err("rotary embedding does not preserve norms".to_string());
        }
    }
    Ok(())
}

fn toy_model() -> Result<Model<f32>, String> {
    Model::<f32>::new(ModelConfig::toy(), 5).map_err(|e| e.to_string())
}

fn toy_image(seed: u64, cfg: &ModelConfig) -> Array3<f32> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    Array3::from_shape_fn((cfg.height, cfg.width, 3), |_| rng.random_range(0.0..1.0))
}

fn readout_purity() -> Result<(), String> {
    let model = toy_model()?;
    let cfg = model.cfg.clone();
    let k = CameraIntrinsics::new(8.0, 8.0, 2.0, 2.0, cfg.width, cfg.height).unwrap();
    let (_, state) = model
        .step(&model.fresh_state(), &ModelInput::Image(toy_image(9, &cfg)))
        .map_err(|e| e.to_string())?;
    for i in 0..10 {
        let rm = camera_to_raymap(&k, &Pose::look_at(
            Vector3::new(0.3 * i as f64, 1.0, -2.0),
            Vector3::zeros(),
            Vector3::new(0.0, 1.0, 0.0),
        ));
        let (_, after) = model
            .step(&state, &ModelInput::Raymap(rm))
            .map_err(|e| e.to_string())?;
        if after.tokens != state.tokens || after.step != state.step {
            return Err(format!("raymap step {i} mutated the state"));
        }
    }
    Ok(())
}

fn streaming_equality() -> Result<(), String> {
    let model = toy_model()?;
    let cfg = model.cfg.clone();
    let inputs: Vec<ModelInput> = (0..4).map(|i| ModelInput::Image(toy_image(20 + i, &cfg))).collect();
    let (full, full_state) = model.run_sequence(&inputs).map_err(|e| e.to_string())?;
    for split in 1..4 {
        let (mut preds, mut state) = model.run_sequence(&inputs[..split]).map_err(|e| e.to_string())?;
        for input in &inputs[split..] {
            let (p, s) = model.step(&state, input).map_err(|e| e.to_string())?;
            preds.push(p);
            state = s;
        }
        if state.tokens != full_state.tokens {
            return Err(format!("split {split}: state tokens differ"));
        }
        for (a, b) in preds.iter().zip(full.iter()) {
            if a.x_world.points != b.x_world.points {
                return Err(format!("split {split}: predictions differ"));
            }
        }
    }
    Ok(())
}

fn masking_rate() -> Result<(), String> {
    let mut scene = generate_scene(77);
    scene.dynamic = None;
    let mut rng = ChaCha12Rng::seed_from_u64(6);
    let base = sample_sequence(&scene, 5, SequenceMode::Video, 32, 32, &mut rng)
        .map_err(|e| e.to_string())?;
    let mut masked = 0usize;
    let mut total = 0usize;
    for _ in 0..500 {
        let s = mask_with_raymaps(base.clone(), 0.2, &mut rng).map_err(|e| e.to_string())?;
        if s.frames[0].kind != FrameKind::Image {
            return Err("first frame was masked".to_string());
        }
        for f in &s.frames[1..] {
            total += 1;
            masked += (f.kind == FrameKind::Raymap) as usize;
        }
    }
    let rate = masked as f64 / total as f64;
    if (rate - 0.2).abs() > 0.03 {
        return Err(format!("masking rate {rate:.3} outside 0.2 ± 0.03"));
    }
    Ok(())
}

fn container_round_trip() -> Result<(), String> {
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let x = ArrayD::<f32>::from_shape_vec(
        IxDyn(&[2, 3, 4]),
        (0..24).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
    )
    .unwrap();
    let bytes = tensor_bytes(&x);
    let back: ArrayD<f32> = tensor_from_bytes(&bytes, "selftest").map_err(|e| e.to_string())?;
    if back != x {
        return Err("tensor container round trip not bit-exact".to_string());
    }
    Ok(())
}

pub fn run(_args: SelftestArgs) -> Result<(), AppError> {
    let checks: Vec<Check> = vec![
        ("geometry raymap round trip", geometry_round_trip),
        ("pose compose/inverse", pose_algebra),
        ("umeyama similarity recovery", umeyama_recovery),
        ("substrate gradient check", substrate_gradients),
        ("softmax and rope invariants", softmax_and_rope_invariants),
        ("state readout purity", readout_purity),
        ("streaming equality", streaming_equality),
        ("raymap masking rate", masking_rate),
        ("tensor container round trip", container_round_trip),
    ];
    let mut failures = 0;
    for (name, f) in checks {
        match f() {
            Ok(()) => println!("[PASS] {name}"),
            Err(detail) => {
                println!("[FAIL] {name}: {detail}");
                failures += 1;
            }
        }
    }
    if failures > 0 {
        return Err(AppError::Numeric(format!("{failures} selftest suite(s) failed")));
    }
    println!("all selftest suites passed");
    Ok(())
}
