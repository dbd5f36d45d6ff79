use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::geometry::{pose_compose, pose_inverse, umeyama_sim3, Pose};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrajReport {
    /// RMSE of translation error after Sim(3) alignment, meters.
    pub ate: f64,
    /// Mean translation error of consecutive relative transforms, meters.
    pub rpe_trans: f64,
    /// Mean rotation error of consecutive relative transforms, degrees.
    pub rpe_rot: f64,
}

/// Trajectory accuracy after Sim(3) alignment of the translations. RPE uses
/// stride-1 consecutive pairs; the aligned scale is applied to predicted
/// relative translations so the two error classes share units.
pub fn trajectory_metrics(pred: &[Pose], gt: &[Pose]) -> Result<TrajReport, EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::LengthMismatch {
            left: pred.len(),
            right: gt.len(),
        });
    }
    if pred.len() < 3 {
        return Err(EvalError::TooFew {
            need: 3,
            got: pred.len(),
        });
    }
    let src: Vec<_> = pred.iter().map(|p| p.translation()).collect();
    let dst: Vec<_> = gt.iter().map(|p| p.translation()).collect();
    let sim = umeyama_sim3(&src, &dst)?;

    let mut sq = 0.0;
    for (s, d) in src.iter().zip(dst.iter()) {
        sq += (sim.apply(*s) - d).norm_squared();
    }
    let ate = (sq / src.len() as f64).sqrt();

    let mut trans_sum = 0.0;
    let mut rot_sum = 0.0;
    let pairs = pred.len() - 1;
    for i in 0..pairs {
        let g_rel = pose_compose(&pose_inverse(&gt[i]), &gt[i + 1]);
        let p_rel = pose_compose(&pose_inverse(&pred[i]), &pred[i + 1]);
        let p_rel_scaled = Pose::from_parts(
            p_rel.quat(),
            p_rel.translation() * sim.s,
        );
        let delta = pose_compose(&pose_inverse(&g_rel), &p_rel_scaled);
        trans_sum += delta.translation().norm();
        rot_sum += delta.quat().angle().to_degrees();
    }
    Ok(TrajReport {
        ate,
        rpe_trans: trans_sum / pairs as f64,
        rpe_rot: rot_sum / pairs as f64,
    })
}
