use approx::assert_abs_diff_eq;
use nalgebra::Vector3;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::*;
use crate::geometry::{pose_compose, Pose, Sim3};
use crate::synth::{generate_scene, sample_sequence, SequenceMode};

fn depth_frames(rng: &mut ChaCha12Rng, n: usize) -> (Vec<Array2<f64>>, Vec<Array2<bool>>) {
    let gts: Vec<Array2<f64>> = (0..n)
        .map(|_| Array2::from_shape_fn((8, 8), |_| rng.random_range(0.5..8.0)))
        .collect();
    let valid = gts.iter().map(|g| g.mapv(|d| d > 0.0)).collect();
    (gts, valid)
}

#[test]
fn depth_perfect_prediction_is_ideal_under_every_alignment() {
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let (gts, valid) = depth_frames(&mut rng, 3);
    for align in [
        DepthAlignment::None,
        DepthAlignment::PerFrameMedian,
        DepthAlignment::PerSeqScale,
        DepthAlignment::PerSeqScaleShift,
    ] {
        let rep = depth_metrics(&gts, &gts, &valid, align).unwrap();
        assert!(rep.abs_rel < 1e-12, "{align:?}: abs_rel {}", rep.abs_rel);
        assert_eq!(rep.delta, 1.0);
    }
}

#[test]
fn depth_uniform_scale_cancels_under_scale_alignment_but_not_raw() {
    let mut rng = ChaCha12Rng::seed_from_u64(2);
    let (gts, valid) = depth_frames(&mut rng, 2);
    let preds: Vec<Array2<f64>> = gts.iter().map(|g| g.mapv(|d| 1.3 * d)).collect();

    let rep = depth_metrics(&preds, &gts, &valid, DepthAlignment::PerSeqScale).unwrap();
    assert!(rep.abs_rel < 1e-12);
    assert_eq!(rep.delta, 1.0);

    let rep = depth_metrics(&preds, &gts, &valid, DepthAlignment::PerFrameMedian).unwrap();
    assert!(rep.abs_rel < 1e-12);

    // Raw comparison keeps the 30% error; 1.3 is not strictly below 1.25.
    let rep = depth_metrics(&preds, &gts, &valid, DepthAlignment::None).unwrap();
    assert_abs_diff_eq!(rep.abs_rel, 0.3, epsilon = 1e-12);
    assert_eq!(rep.delta, 0.0);
}

#[test]
fn depth_scale_shift_absorbs_affine_errors() {
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let (gts, valid) = depth_frames(&mut rng, 2);
    let preds: Vec<Array2<f64>> = gts.iter().map(|g| g.mapv(|d| 0.7 * d - 0.4)).collect();
    let rep = depth_metrics(&preds, &gts, &valid, DepthAlignment::PerSeqScaleShift).unwrap();
    assert!(rep.abs_rel < 1e-9, "abs_rel {}", rep.abs_rel);
    let rep = depth_metrics(&preds, &gts, &valid, DepthAlignment::PerSeqScale).unwrap();
    assert!(rep.abs_rel > 1e-3, "shift should not be absorbed by scale-only");
}

#[test]
fn delta_is_symmetric_in_pred_and_gt() {
    let mut rng = ChaCha12Rng::seed_from_u64(4);
    let (gts, valid) = depth_frames(&mut rng, 2);
    let preds: Vec<Array2<f64>> = gts
        .iter()
        .map(|g| g.mapv(|d| d * rng.random_range(0.7..1.4)))
        .collect();
    let a = depth_metrics(&preds, &gts, &valid, DepthAlignment::None).unwrap();
    let b = depth_metrics(&gts, &preds, &valid, DepthAlignment::None).unwrap();
    assert_abs_diff_eq!(a.delta, b.delta, epsilon = 1e-12);
}

#[test]
fn depth_no_valid_pixels_is_error() {
    let gt = vec![Array2::<f64>::zeros((4, 4))];
    let pred = vec![Array2::<f64>::ones((4, 4))];
    let valid = vec![Array2::from_elem((4, 4), false)];
    assert!(matches!(
        depth_metrics(&pred, &gt, &valid, DepthAlignment::None),
        Err(EvalError::Empty { .. })
    ));
}

fn random_trajectory(rng: &mut ChaCha12Rng, n: usize) -> Vec<Pose> {
    (0..n)
        .map(|i| {
            let eye = Vector3::new(
                2.0 * (i as f64 * 0.3).cos() + rng.random_range(-0.05..0.05),
                1.0 + 0.1 * i as f64,
                2.0 * (i as f64 * 0.3).sin(),
            );
            Pose::look_at(eye, Vector3::zeros(), Vector3::new(0.0, 1.0, 0.0))
        })
        .collect()
}

#[test]
fn trajectory_perfect_prediction_is_zero() {
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    let traj = random_trajectory(&mut rng, 6);
    let rep = trajectory_metrics(&traj, &traj).unwrap();
    assert!(rep.ate < 1e-12);
    assert!(rep.rpe_trans < 1e-12);
    assert!(rep.rpe_rot < 1e-9);
}

#[test]
fn trajectory_alignment_absorbs_global_similarity() {
    let mut rng = ChaCha12Rng::seed_from_u64(6);
    let gt = random_trajectory(&mut rng, 8);
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let g = Pose::new([h, 0.0, h, 0.0], [3.0, -1.0, 2.0]).unwrap();
    let sim = Sim3 {
        s: 2.5,
        r: g.rotation_matrix(),
        t: g.translation(),
    };
    // Apply the similarity to every pose: rotation composes, translation
    // maps through the full Sim(3).
    let pred: Vec<Pose> = gt
        .iter()
        .map(|p| Pose::from_rotation(sim.r * p.rotation_matrix(), sim.apply(p.translation())))
        .collect();
    let rep = trajectory_metrics(&pred, &gt).unwrap();
    assert!(rep.ate < 1e-9, "ATE after alignment {}", rep.ate);
    assert!(rep.rpe_rot < 1e-6);
    assert!(rep.rpe_trans < 1e-9);
}

#[test]
fn rpe_localizes_a_single_rotated_pose() {
    // Rotating one mid-trajectory pose by 10 degrees disturbs exactly two
    // consecutive deltas; mean rotation error is 20/(N-1) degrees, which a
    // brute-force pairwise oracle confirms.
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let gt = random_trajectory(&mut rng, 6);
    let mut pred = gt.clone();
    let tilt = Pose::new(
        [(5.0f64).to_radians().cos(), (5.0f64).to_radians().sin(), 0.0, 0.0],
        [0.0; 3],
    )
    .unwrap(); // 10 degrees about x as a quaternion (half-angle 5)
    pred[3] = pose_compose(&pred[3], &tilt);
    let rep = trajectory_metrics(&pred, &gt).unwrap();
    let expected = 2.0 * 10.0 / (gt.len() as f64 - 1.0);
    assert_abs_diff_eq!(rep.rpe_rot, expected, epsilon = 1e-6);

    // Brute-force oracle over consecutive pairs.
    let mut sum = 0.0;
    for i in 0..gt.len() - 1 {
        let g_rel = pose_compose(&crate::geometry::pose_inverse(&gt[i]), &gt[i + 1]);
        let p_rel = pose_compose(&crate::geometry::pose_inverse(&pred[i]), &pred[i + 1]);
        sum += g_rel.rotation_angle_to(&p_rel);
    }
    assert_abs_diff_eq!(rep.rpe_rot, sum / (gt.len() as f64 - 1.0), epsilon = 1e-9);
}

#[test]
fn trajectory_rejects_short_or_mismatched_input() {
    let mut rng = ChaCha12Rng::seed_from_u64(8);
    let t = random_trajectory(&mut rng, 6);
    assert!(matches!(
        trajectory_metrics(&t[..2], &t[..2]),
        Err(EvalError::TooFew { .. })
    ));
    assert!(matches!(
        trajectory_metrics(&t[..4], &t[..5]),
        Err(EvalError::LengthMismatch { .. })
    ));
}

fn plane_cloud(n: usize, spacing: f64) -> Vec<Vector3<f64>> {
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            out.push(Vector3::new(i as f64 * spacing, j as f64 * spacing, 0.0));
        }
    }
    out
}

#[test]
fn recon_identical_clouds_are_ideal() {
    let cloud = plane_cloud(6, 0.1);
    let rep = recon_metrics(&cloud, &cloud, 8).unwrap();
    assert_eq!(rep.acc_mean, 0.0);
    assert_eq!(rep.comp_mean, 0.0);
    assert!(rep.nc_mean > 1.0 - 1e-6);
}

#[test]
fn recon_plane_offset_along_normal() {
    let gt = plane_cloud(6, 0.1);
    let pred: Vec<Vector3<f64>> = gt
        .iter()
        .map(|p| p + Vector3::new(0.0, 0.0, 0.01))
        .collect();
    let rep = recon_metrics(&pred, &gt, 8).unwrap();
    assert_abs_diff_eq!(rep.acc_mean, 0.01, epsilon = 1e-12);
    assert_abs_diff_eq!(rep.comp_mean, 0.01, epsilon = 1e-12);
    assert!(rep.nc_mean > 1.0 - 1e-9);
}

#[test]
fn recon_partial_coverage_is_asymmetric() {
    let gt = plane_cloud(6, 0.1);
    let pred: Vec<Vector3<f64>> = gt.iter().take(gt.len() / 2).cloned().collect();
    let rep = recon_metrics(&pred, &gt, 8).unwrap();
    assert_eq!(rep.acc_mean, 0.0);
    assert!(rep.comp_mean > 0.0);
}

#[test]
fn recon_completion_improves_with_more_points() {
    // Nested clouds: adding predicted points can only shrink completion.
    let gt = plane_cloud(7, 0.1);
    let small: Vec<Vector3<f64>> = gt.iter().take(12).cloned().collect();
    let big: Vec<Vector3<f64>> = gt.iter().take(30).cloned().collect();
    let rep_small = recon_metrics(&small, &gt, 8).unwrap();
    let rep_big = recon_metrics(&big, &gt, 8).unwrap();
    assert!(rep_big.comp_mean <= rep_small.comp_mean);
    assert!(matches!(
        recon_metrics(&gt[..4], &gt, 8),
        Err(EvalError::TooFew { .. })
    ));
}

#[test]
fn harness_bypass_hits_ideal_values_and_is_deterministic() {
    let scene = {
        let mut s = generate_scene(31);
        s.dynamic = None;
        s
    };
    let mut rng = ChaCha12Rng::seed_from_u64(9);
    let sample = sample_sequence(&scene, 4, SequenceMode::Video, 32, 32, &mut rng).unwrap();
    let seqs = vec![("seq0".to_string(), sample)];
    let opts = EvalOptions {
        bypass_gt: true,
        ..EvalOptions::default()
    };

    let depth = evaluate_sequences(None, &seqs, Protocol::Depth, &opts).unwrap();
    assert!(depth.per_sequence[0].error.is_none());
    assert!(depth.aggregate["abs_rel"].mean < 1e-9);
    assert_eq!(depth.aggregate["delta"].mean, 1.0);

    let pose = evaluate_sequences(None, &seqs, Protocol::Pose, &opts).unwrap();
    assert!(pose.per_sequence[0].error.is_none(), "pose error: {:?}", pose.per_sequence[0].error);
    assert!(pose.aggregate["ate"].mean < 1e-9);
    assert!(pose.aggregate["rpe_rot"].mean < 1e-6);

    let recon = evaluate_sequences(None, &seqs, Protocol::Recon, &opts).unwrap();
    assert!(recon.aggregate["acc_mean"].mean < 1e-9);
    assert!(recon.aggregate["comp_mean"].mean < 1e-9);
    assert!(recon.aggregate["nc_mean"].mean > 0.99);

    // Identical runs serialize to identical bytes.
    let a = serde_json::to_string(&evaluate_sequences(None, &seqs, Protocol::Depth, &opts).unwrap())
        .unwrap();
    let b = serde_json::to_string(&evaluate_sequences(None, &seqs, Protocol::Depth, &opts).unwrap())
        .unwrap();
    assert_eq!(a, b);
}

#[test]
fn harness_records_per_sequence_error_and_continues() {
    let scene = {
        let mut s = generate_scene(33);
        s.dynamic = None;
        s
    };
    let mut rng = ChaCha12Rng::seed_from_u64(10);
    let good = sample_sequence(&scene, 4, SequenceMode::Video, 32, 32, &mut rng).unwrap();
    // A sequence with no valid depth anywhere: ground truth cloud is empty.
    let mut bad = good.clone();
    for f in bad.frames.iter_mut() {
        f.depth.fill(0.0);
    }
    let seqs = vec![("bad".to_string(), bad), ("good".to_string(), good)];
    let opts = EvalOptions {
        bypass_gt: true,
        ..EvalOptions::default()
    };
    let rep = evaluate_sequences(None, &seqs, Protocol::Recon, &opts).unwrap();
    assert!(rep.per_sequence[0].error.is_some());
    assert!(rep.per_sequence[1].error.is_none());
    assert!(rep.aggregate.contains_key("acc_mean"));
}
