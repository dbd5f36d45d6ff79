//! Evaluation protocols: depth, camera trajectory, and reconstruction.
//!
//! All metrics run on plain f64 values, independent of the tensor
//! substrate. Alignment conventions: depth supports none / per-frame median
//! / per-sequence scale / per-sequence scale-and-shift; trajectories are
//! Sim(3)-aligned before the error is computed.

mod depth;
mod harness;
mod recon;
mod traj;
#[cfg(test)]
mod tests;

pub use depth::{depth_metrics, DepthAlignment, DepthReport};
pub use harness::{confidence_filtered_cloud, evaluate_sequences, gt_world_pointmap,
    ground_truth_predictions, predict_sequence, relative_poses, Aggregate, EvalOptions,
    EvalReport, Protocol, SequenceReport};
pub use recon::{recon_metrics, ReconReport};
pub use traj::{trajectory_metrics, TrajReport};

use crate::geometry::GeometryError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("empty evaluation: {detail}")]
    Empty { detail: String },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {need} items, got {got}")]
    TooFew { need: usize, got: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// Median of a non-empty slice (average of the middle pair for even
/// counts). Input order is irrelevant.
pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
