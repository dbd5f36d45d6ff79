use ndarray::{Array3, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::*;
use crate::geometry::{camera_to_raymap, CameraIntrinsics};
use crate::tensor::gradient_check;

fn toy_model() -> Model<f64> {
    Model::<f64>::new(ModelConfig::toy(), 7).unwrap()
}

fn toy_image(seed: u64, cfg: &ModelConfig) -> Array3<f32> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut img = Array3::<f32>::zeros((cfg.height, cfg.width, 3));
    for v in img.iter_mut() {
        *v = rng.random_range(0.0..1.0);
    }
    img
}

fn toy_raymap(cfg: &ModelConfig) -> crate::geometry::Raymap {
    let k = CameraIntrinsics::new(
        cfg.width as f64,
        cfg.width as f64,
        cfg.width as f64 / 2.0,
        cfg.height as f64 / 2.0,
        cfg.width,
        cfg.height,
    )
    .unwrap();
    camera_to_raymap(&k, &crate::geometry::Pose::identity())
}

#[test]
fn encoder_token_count_is_patch_grid() {
    // 32x32 with patch 8 -> 16 tokens.
    let cfg = ModelConfig::default();
    assert_eq!(cfg.n_patches(), 16);
    let model = Model::<f32>::new(cfg.clone(), 1).unwrap();
    let mut g = crate::tensor::Graph::<f32>::new();
    let b = model.params.bind_all(&mut g, false);
    let img = toy_image(3, &cfg);
    let tokens = model.encode_image_g(&mut g, &b, &img).unwrap();
    assert_eq!(g.shape(tokens), [16, cfg.d_enc]);
}

#[test]
fn encoder_is_deterministic() {
    let model = toy_model();
    let img = toy_image(5, &model.cfg);
    let run = || {
        let mut g = crate::tensor::Graph::<f64>::new();
        let b = model.params.bind_all(&mut g, false);
        let t = model.encode_image_g(&mut g, &b, &img).unwrap();
        g.value(t).clone()
    };
    assert_eq!(run(), run());
}

#[test]
fn encoder_rejects_wrong_dims() {
    let model = toy_model();
    let img = Array3::<f32>::zeros((8, 8, 3));
    let mut g = crate::tensor::Graph::<f64>::new();
    let b = model.params.bind_all(&mut g, false);
    assert!(matches!(
        model.encode_image_g(&mut g, &b, &img),
        Err(ModelError::BadInputDims { .. })
    ));
}

#[test]
fn encoder_patch_embed_gradient_check() {
    let model = toy_model();
    let img = toy_image(11, &model.cfg);
    let wid = model.params.id_of("enc.patch_embed.weight").unwrap();
    let w0 = model.params.get(wid).value.clone();
    let err = gradient_check(&[w0], |g, vars| {
        let b = model.params.bind_custom(|id, p| {
            if id == wid {
                vars[0]
            } else {
                g.leaf(p.value.clone(), false)
            }
        });
        let t = model
            .encode_image_g(g, &b, &img)
            .map_err(|_| crate::tensor::TensorError::NonScalarLoss { got: vec![] })?;
        g.mean_all(t)
    })
    .unwrap();
    assert!(err < 1e-4, "patch embed gradient error {err}");
}

#[test]
fn raymap_encoder_matches_image_token_count_and_determinism() {
    let model = toy_model();
    let rm = toy_raymap(&model.cfg);
    let img = toy_image(2, &model.cfg);
    let mut g = crate::tensor::Graph::<f64>::new();
    let b = model.params.bind_all(&mut g, false);
    let ti = model.encode_image_g(&mut g, &b, &img).unwrap();
    let tr = model.encode_raymap_g(&mut g, &b, &rm).unwrap();
    assert_eq!(g.shape(ti), g.shape(tr));
    let tr2 = model.encode_raymap_g(&mut g, &b, &rm).unwrap();
    assert_eq!(g.value(tr), g.value(tr2));
}

#[test]
fn raymap_encoder_rejects_non_unit_directions() {
    let model = toy_model();
    let mut rm = toy_raymap(&model.cfg);
    rm.directions[[0, 0, 0]] += 0.5;
    let mut g = crate::tensor::Graph::<f64>::new();
    let b = model.params.bind_all(&mut g, false);
    assert!(model.encode_raymap_g(&mut g, &b, &rm).is_err());
}

#[test]
fn raymap_encoder_gradient_check() {
    let model = toy_model();
    let rm = toy_raymap(&model.cfg);
    let wid = model.params.id_of("renc.patch_embed.weight").unwrap();
    let w0 = model.params.get(wid).value.clone();
    let err = gradient_check(&[w0], |g, vars| {
        let b = model.params.bind_custom(|id, p| {
            if id == wid {
                vars[0]
            } else {
                g.leaf(p.value.clone(), false)
            }
        });
        let t = model
            .encode_raymap_g(g, &b, &rm)
            .map_err(|_| crate::tensor::TensorError::NonScalarLoss { got: vec![] })?;
        g.mean_all(t)
    })
    .unwrap();
    assert!(err < 1e-4, "raymap embed gradient error {err}");
}

#[test]
fn readout_keeps_state_bit_identical_and_update_changes_it() {
    let model = toy_model();
    let img = toy_image(13, &model.cfg);
    let mut g = crate::tensor::Graph::<f64>::new();
    let b = model.params.bind_all(&mut g, false);
    let state0 = model.fresh_state();
    let sv = g.leaf(state0.tokens.clone().into_dyn(), false);
    let tokens = model.encode_image_g(&mut g, &b, &img).unwrap();

    let (_, _, s_ro) = model.decode_interact_g(&mut g, &b, tokens, sv, false).unwrap();
    assert_eq!(g.value(s_ro), g.value(sv), "readout must not touch the state");

    let (_, _, s_up) = model.decode_interact_g(&mut g, &b, tokens, sv, true).unwrap();
    assert_ne!(g.value(s_up), g.value(sv), "update must produce a new state");
}

#[test]
fn decode_is_deterministic() {
    let model = toy_model();
    let img = toy_image(17, &model.cfg);
    let run = || {
        let mut g = crate::tensor::Graph::<f64>::new();
        let b = model.params.bind_all(&mut g, false);
        let sv = g.leaf(model.fresh_state().tokens.into_dyn(), false);
        let tokens = model.encode_image_g(&mut g, &b, &img).unwrap();
        let (z, f, _) = model.decode_interact_g(&mut g, &b, tokens, sv, true).unwrap();
        (g.value(z).clone(), g.value(f).clone())
    };
    let (z1, f1) = run();
    let (z2, f2) = run();
    assert_eq!(z1, z2);
    assert_eq!(f1, f2);
}

#[test]
fn head_self_confidence_at_least_one_and_zero_weights_give_unit_depth() {
    let mut model = toy_model();
    let p2 = model.cfg.patch * model.cfg.patch;
    // Zero the head.
    model
        .set_param("head.self_map.weight", ArrayD::zeros(IxDyn(&[model.cfg.d_dec, p2 * 4])))
        .unwrap();
    model
        .set_param("head.self_map.bias", ArrayD::zeros(IxDyn(&[p2 * 4])))
        .unwrap();
    let img = toy_image(19, &model.cfg);
    let state = model.fresh_state();
    let (pred, _) = model.step(&state, &ModelInput::Image(img)).unwrap();
    assert_eq!(pred.x_self.points.dim(), (model.cfg.height, model.cfg.width, 3));
    for v in 0..model.cfg.height {
        for u in 0..model.cfg.width {
            assert_eq!(pred.x_self.points[[v, u, 0]], 0.0);
            assert_eq!(pred.x_self.points[[v, u, 1]], 0.0);
            assert_eq!(pred.x_self.points[[v, u, 2]], 1.0); // exp(0)
            assert_eq!(pred.c_self[[v, u]], 2.0); // 1 + exp(0)
        }
    }
}

#[test]
fn confidences_always_at_least_one() {
    let model = toy_model();
    let img = toy_image(23, &model.cfg);
    let (pred, _) = model.step(&model.fresh_state(), &ModelInput::Image(img)).unwrap();
    assert!(pred.c_self.iter().all(|&c| c >= 1.0));
    assert!(pred.c_world.iter().all(|&c| c >= 1.0));
}

#[test]
fn head_world_identity_modulation_equals_unmodulated_blocks() {
    // With gain forced to 1 and bias to 0 the modulated blocks reduce to
    // plain parameter-free layer norm, whatever the conditioning vector is.
    let mut model = toy_model();
    let d = model.cfg.d_dec;
    for blk in 0..2 {
        for ln in ["mod1", "mod2"] {
            model
                .set_param(
                    &format!("head.world.block{blk}.{ln}.gain_weight"),
                    ArrayD::zeros(IxDyn(&[d, d])),
                )
                .unwrap();
            model
                .set_param(
                    &format!("head.world.block{blk}.{ln}.gain_bias"),
                    ArrayD::from_elem(IxDyn(&[d]), 1.0),
                )
                .unwrap();
            model
                .set_param(
                    &format!("head.world.block{blk}.{ln}.bias_weight"),
                    ArrayD::zeros(IxDyn(&[d, d])),
                )
                .unwrap();
            model
                .set_param(
                    &format!("head.world.block{blk}.{ln}.bias_bias"),
                    ArrayD::zeros(IxDyn(&[d])),
                )
                .unwrap();
        }
    }
    let img = toy_image(29, &model.cfg);
    let mut g = crate::tensor::Graph::<f64>::new();
    let b = model.params.bind_all(&mut g, false);
    let sv = g.leaf(model.fresh_state().tokens.into_dyn(), false);
    let tokens = model.encode_image_g(&mut g, &b, &img).unwrap();
    let (z, f, _) = model.decode_interact_g(&mut g, &b, tokens, sv, true).unwrap();

    let (pts_a, _) = model.head_world_g(&mut g, &b, f, z).unwrap();
    // A different conditioning vector must not change anything.
    let z_other = g.scalar_mul(z, -3.7).unwrap();
    let (pts_b, _) = model.head_world_g(&mut g, &b, f, z_other).unwrap();
    assert_eq!(g.value(pts_a), g.value(pts_b));
}

#[test]
fn head_world_gradient_flows_through_conditioning() {
    // The modulation projections start at the identity (zero weights), so
    // randomize them: the claim is about random weights.
    let mut model = toy_model();
    let d = model.cfg.d_dec;
    let mut rng = ChaCha12Rng::seed_from_u64(99);
    for blk in 0..2 {
        for ln in ["mod1", "mod2"] {
            for part in ["gain_weight", "bias_weight"] {
                let w = ArrayD::from_shape_vec(
                    IxDyn(&[d, d]),
                    (0..d * d).map(|_| rng.random_range(-0.2..0.2)).collect(),
                )
                .unwrap();
                model
                    .set_param(&format!("head.world.block{blk}.{ln}.{part}"), w)
                    .unwrap();
            }
        }
    }
    let img = toy_image(31, &model.cfg);
    let mut g = crate::tensor::Graph::<f64>::new();
    let b = model.params.bind_all(&mut g, false);
    let sv = g.leaf(model.fresh_state().tokens.into_dyn(), false);
    let tokens = model.encode_image_g(&mut g, &b, &img).unwrap();
    let (z, f, _) = model.decode_interact_g(&mut g, &b, tokens, sv, true).unwrap();
    // Re-leaf z as a grad-requiring input.
    let z_leaf = g.leaf(g.value(z).clone(), true);
    let (pts, _) = model.head_world_g(&mut g, &b, f, z_leaf).unwrap();
    let loss = g.sum_all(pts).unwrap();
    let grads = g.backward(loss).unwrap();
    let gz = grads.get(z_leaf).expect("gradient on conditioning vector");
    assert!(gz.iter().any(|&v| v != 0.0), "modulation is live");
}

#[test]
fn head_pose_unit_norm_and_zero_fallback() {
    let mut model = toy_model();
    let img = toy_image(37, &model.cfg);
    let (pred, _) = model
        .step(&model.fresh_state(), &ModelInput::Image(img.clone()))
        .unwrap();
    let n: f64 = pred.pose.q.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((n - 1.0).abs() < 1e-6);

    // Zero pose head: raw quaternion (0,0,0,0) falls back to identity.
    let d = model.cfg.d_dec;
    model.set_param("head.pose.fc2.weight", ArrayD::zeros(IxDyn(&[d, 7]))).unwrap();
    model.set_param("head.pose.fc2.bias", ArrayD::zeros(IxDyn(&[7]))).unwrap();
    let (pred, _) = model.step(&model.fresh_state(), &ModelInput::Image(img)).unwrap();
    assert_eq!(pred.pose.q, [1.0, 0.0, 0.0, 0.0]);
    assert_eq!(pred.pose.t, [0.0, 0.0, 0.0]);
}

#[test]
fn head_color_bounded_and_zero_weights_give_half() {
    let mut model = toy_model();
    let rm = toy_raymap(&model.cfg);
    let img = toy_image(41, &model.cfg);
    let (_, state) = model
        .step(&model.fresh_state(), &ModelInput::Image(img))
        .unwrap();
    let (pred, _) = model.step(&state, &ModelInput::Raymap(rm.clone())).unwrap();
    let color = pred.color.expect("raymap inputs produce color");
    assert_eq!(color.dim(), (model.cfg.height, model.cfg.width, 3));
    assert!(color.iter().all(|&c| (0.0..=1.0).contains(&c)));

    let p2 = model.cfg.patch * model.cfg.patch;
    model
        .set_param("head.color.weight", ArrayD::zeros(IxDyn(&[model.cfg.d_dec, p2 * 3])))
        .unwrap();
    model
        .set_param("head.color.bias", ArrayD::zeros(IxDyn(&[p2 * 3])))
        .unwrap();
    let (pred, _) = model.step(&state, &ModelInput::Raymap(rm)).unwrap();
    let color = pred.color.unwrap();
    assert!(color.iter().all(|&c| c == 0.5));
}

#[test]
fn raymap_step_preserves_state_and_counter() {
    let model = toy_model();
    let img = toy_image(43, &model.cfg);
    let (_, s1) = model
        .step(&model.fresh_state(), &ModelInput::Image(img))
        .unwrap();
    assert_eq!(s1.step, 1);
    let rm = toy_raymap(&model.cfg);
    let (pred, s2) = model.step(&s1, &ModelInput::Raymap(rm)).unwrap();
    assert_eq!(s2.tokens, s1.tokens);
    assert_eq!(s2.step, 1);
    assert!(pred.color.is_some());
}

#[test]
fn fresh_states_equal_learned_initialization() {
    let model = toy_model();
    let a = model.fresh_state();
    let b = model.fresh_state();
    assert_eq!(a.tokens, b.tokens);
    assert_eq!(a.step, 0);
    let s0 = model.params.get(model.params.id_of("state.init").unwrap());
    assert_eq!(a.tokens.clone().into_dyn(), s0.value);
}

#[test]
fn run_sequence_singleton_and_raymap_first_rejection() {
    let model = toy_model();
    let img = toy_image(47, &model.cfg);
    let (preds, state) = model.run_sequence(&[ModelInput::Image(img)]).unwrap();
    assert_eq!(preds.len(), 1);
    assert_eq!(state.step, 1);

    let rm = toy_raymap(&model.cfg);
    assert!(matches!(
        model.run_sequence(&[ModelInput::Raymap(rm)]),
        Err(ModelError::RaymapFirst)
    ));
    assert!(matches!(model.run_sequence(&[]), Err(ModelError::EmptySequence)));
}

#[test]
fn streaming_equality_split_equals_full_run() {
    let model = toy_model();
    let inputs: Vec<ModelInput> = (0..4)
        .map(|i| {
            if i == 2 {
                ModelInput::Raymap(toy_raymap(&model.cfg))
            } else {
                ModelInput::Image(toy_image(100 + i, &model.cfg))
            }
        })
        .collect();
    let (full_preds, full_state) = model.run_sequence(&inputs).unwrap();

    for split in 1..inputs.len() {
        let (mut preds, mut state) = model.run_sequence(&inputs[..split]).unwrap();
        for input in &inputs[split..] {
            let (p, s) = model.step(&state, input).unwrap();
            preds.push(p);
            state = s;
        }
        assert_eq!(state.tokens, full_state.tokens);
        assert_eq!(state.step, full_state.step);
        for (a, b) in preds.iter().zip(full_preds.iter()) {
            assert_eq!(a.x_world.points, b.x_world.points);
            assert_eq!(a.pose.q, b.pose.q);
            assert_eq!(a.pose.t, b.pose.t);
        }
    }
}

#[test]
fn sequence_reruns_are_bit_identical() {
    let model = toy_model();
    let inputs: Vec<ModelInput> = (0..3)
        .map(|i| ModelInput::Image(toy_image(200 + i, &model.cfg)))
        .collect();
    let (a, sa) = model.run_sequence(&inputs).unwrap();
    let (b, sb) = model.run_sequence(&inputs).unwrap();
    assert_eq!(sa.tokens, sb.tokens);
    for (x, y) in a.iter().zip(b.iter()) {
        assert_eq!(x.x_self.points, y.x_self.points);
        assert_eq!(x.c_world, y.c_world);
    }
}

#[test]
fn revisit_never_mutates_frozen_state() {
    let model = toy_model();
    let inputs: Vec<ModelInput> = (0..3)
        .map(|i| ModelInput::Image(toy_image(300 + i, &model.cfg)))
        .collect();
    let (_, frozen) = model.run_sequence(&inputs).unwrap();
    let before = frozen.tokens.clone();
    let preds = model.revisit(&frozen, &inputs).unwrap();
    assert_eq!(frozen.tokens, before);
    assert_eq!(preds.len(), 3);
    for p in &preds {
        assert!(p.c_self.iter().all(|&c| c >= 1.0));
        assert!(p.color.is_none());
    }
}

#[test]
fn checkpoint_round_trip_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let model = toy_model();
    checkpoint::save_checkpoint(dir.path(), &model, 42, None).unwrap();
    let (loaded, step, moments) = checkpoint::load_checkpoint::<f64>(dir.path()).unwrap();
    assert_eq!(step, 42);
    assert!(moments.is_none());
    assert_eq!(loaded.cfg, model.cfg);
    for (a, b) in loaded.params.iter_sorted().zip(model.params.iter_sorted()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.value, b.value);
    }
    // Wrong dtype is rejected.
    assert!(checkpoint::load_checkpoint::<f32>(dir.path()).is_err());
}
