use std::collections::BTreeMap;

use nalgebra::Vector3;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{depth_metrics, median, recon_metrics, trajectory_metrics, DepthAlignment, EvalError};
use crate::geometry::{depth_to_pointmap, pose_compose, pose_inverse, transform_pointmap, Pose};
use crate::model::{Model, ModelInput, PredictionSet};
use crate::synth::{FrameSample, SequenceSample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Depth,
    Pose,
    Recon,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Depth => "depth",
            Protocol::Pose => "pose",
            Protocol::Recon => "recon",
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub alignment: DepthAlignment,
    /// Inject ground truth as predictions (harness sanity mode).
    pub bypass_gt: bool,
    /// Produce predictions by revisiting the final state instead of online.
    pub revisit: bool,
    pub k_normals: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            alignment: DepthAlignment::PerSeqScale,
            bypass_gt: false,
            revisit: false,
            k_normals: 8,
        }
    }
}

#[derive(Serialize, Deserialize, Debug)]
pub struct SequenceReport {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Serialize, Deserialize, Debug)]
pub struct Aggregate {
    pub mean: f64,
    pub median: f64,
}

#[derive(Serialize, Deserialize, Debug)]
pub struct EvalReport {
    pub protocol: String,
    pub alignment: String,
    pub per_sequence: Vec<SequenceReport>,
    pub aggregate: BTreeMap<String, Aggregate>,
}

/// Poses of a sequence relative to its first frame — the model's world
/// frame convention.
pub fn relative_poses(sample: &SequenceSample) -> Vec<Pose> {
    let inv0 = pose_inverse(&sample.frames[0].pose);
    sample
        .frames
        .iter()
        .map(|f| pose_compose(&inv0, &f.pose))
        .collect()
}

/// Ground-truth world pointmap of one frame in the first-frame coordinate
/// system.
pub fn gt_world_pointmap(
    frame: &FrameSample,
    rel_pose: &Pose,
) -> Result<crate::geometry::Pointmap, EvalError> {
    let depth = frame.depth.mapv(|v| v as f64);
    let pm = depth_to_pointmap(&depth, &frame.k)?;
    Ok(transform_pointmap(&pm, rel_pose)?)
}

/// Predictions assembled from the annotations themselves; every metric
/// should sit at its ideal value on these.
pub fn ground_truth_predictions(sample: &SequenceSample) -> Result<Vec<PredictionSet>, EvalError> {
    let rel = relative_poses(sample);
    let mut out = Vec::with_capacity(sample.frames.len());
    for (f, rp) in sample.frames.iter().zip(rel.iter()) {
        let depth = f.depth.mapv(|v| v as f64);
        let x_self = depth_to_pointmap(&depth, &f.k)?;
        let x_world = transform_pointmap(&x_self, rp)?;
        let (h, w) = depth.dim();
        out.push(PredictionSet {
            x_self,
            c_self: Array2::from_elem((h, w), 2.0),
            x_world,
            c_world: Array2::from_elem((h, w), 2.0),
            pose: *rp,
            color: Some(f.image.mapv(|v| v as f64)),
        });
    }
    Ok(out)
}

/// World points of a prediction whose confidence clears the per-frame
/// median of its confidence map.
pub fn confidence_filtered_cloud(pred: &PredictionSet) -> Vec<Vector3<f64>> {
    let (h, w) = pred.c_world.dim();
    let mut confs: Vec<f64> = pred.c_world.iter().copied().collect();
    let thresh = median(&mut confs);
    let mut out = Vec::new();
    for v in 0..h {
        for u in 0..w {
            if pred.x_world.valid[[v, u]] && pred.c_world[[v, u]] >= thresh {
                out.push(Vector3::new(
                    pred.x_world.points[[v, u, 0]],
                    pred.x_world.points[[v, u, 1]],
                    pred.x_world.points[[v, u, 2]],
                ));
            }
        }
    }
    out
}

/// Model predictions for an evaluation sequence: every frame is fed as an
/// image, online or in revisit mode.
pub fn predict_sequence(
    model: &Model<f32>,
    sample: &SequenceSample,
    revisit: bool,
) -> Result<Vec<PredictionSet>, EvalError> {
    let inputs: Vec<ModelInput> = sample
        .frames
        .iter()
        .map(|f| ModelInput::Image(f.image.clone()))
        .collect();
    let (preds, state) = model.run_sequence(&inputs)?;
    if !revisit {
        return Ok(preds);
    }
    Ok(model.revisit(&state, &inputs)?)
}

fn sequence_metrics(
    protocol: Protocol,
    preds: &[PredictionSet],
    sample: &SequenceSample,
    opts: &EvalOptions,
) -> Result<BTreeMap<String, f64>, EvalError> {
    let rel = relative_poses(sample);
    let mut out = BTreeMap::new();
    match protocol {
        Protocol::Depth => {
            let pred_depths: Vec<Array2<f64>> = preds
                .iter()
                .map(|p| {
                    let (h, w) = p.c_self.dim();
                    Array2::from_shape_fn((h, w), |(v, u)| p.x_self.points[[v, u, 2]])
                })
                .collect();
            let gts: Vec<Array2<f64>> = sample
                .frames
                .iter()
                .map(|f| f.depth.mapv(|v| v as f64))
                .collect();
            let valid: Vec<Array2<bool>> = gts.iter().map(|g| g.mapv(|d| d > 0.0)).collect();
            let rep = depth_metrics(&pred_depths, &gts, &valid, opts.alignment)?;
            out.insert("abs_rel".into(), rep.abs_rel);
            out.insert("delta".into(), rep.delta);
        }
        Protocol::Pose => {
            let pred_poses: Vec<Pose> = preds.iter().map(|p| p.pose).collect();
            let rep = trajectory_metrics(&pred_poses, &rel)?;
            out.insert("ate".into(), rep.ate);
            out.insert("rpe_trans".into(), rep.rpe_trans);
            out.insert("rpe_rot".into(), rep.rpe_rot);
        }
        Protocol::Recon => {
            let mut pred_cloud = Vec::new();
            for p in preds {
                pred_cloud.extend(confidence_filtered_cloud(p));
            }
            let mut gt_cloud = Vec::new();
            for (f, rp) in sample.frames.iter().zip(rel.iter()) {
                let pm = gt_world_pointmap(f, rp)?;
                gt_cloud.extend(pm.valid_points());
            }
            if pred_cloud.is_empty() {
                return Err(EvalError::Empty {
                    detail: "confidence filter kept no predicted points".into(),
                });
            }
            let rep = recon_metrics(&pred_cloud, &gt_cloud, opts.k_normals)?;
            out.insert("acc_mean".into(), rep.acc_mean);
            out.insert("acc_median".into(), rep.acc_median);
            out.insert("comp_mean".into(), rep.comp_mean);
            out.insert("comp_median".into(), rep.comp_median);
            out.insert("nc_mean".into(), rep.nc_mean);
            out.insert("nc_median".into(), rep.nc_median);
        }
    }
    Ok(out)
}

/// Run one protocol over named sequences. Per-sequence failures are
/// recorded in the report and do not abort the run; the aggregate averages
/// the sequences that produced metrics.
pub fn evaluate_sequences(
    model: Option<&Model<f32>>,
    seqs: &[(String, SequenceSample)],
    protocol: Protocol,
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let mut per_sequence = Vec::with_capacity(seqs.len());
    for (id, sample) in seqs {
        let result = (|| -> Result<BTreeMap<String, f64>, EvalError> {
            let preds = if opts.bypass_gt {
                ground_truth_predictions(sample)?
            } else {
                let model = model.ok_or_else(|| EvalError::Empty {
                    detail: "no model provided and bypass disabled".into(),
                })?;
                predict_sequence(model, sample, opts.revisit)?
            };
            sequence_metrics(protocol, &preds, sample, opts)
        })();
        match result {
            Ok(metrics) => per_sequence.push(SequenceReport {
                id: id.clone(),
                error: None,
                metrics,
            }),
            Err(e) => per_sequence.push(SequenceReport {
                id: id.clone(),
                error: Some(e.to_string()),
                metrics: BTreeMap::new(),
            }),
        }
    }

    let mut keys = std::collections::BTreeSet::new();
    for s in &per_sequence {
        keys.extend(s.metrics.keys().cloned());
    }
    let mut aggregate = BTreeMap::new();
    for key in keys {
        let mut vals: Vec<f64> = per_sequence
            .iter()
            .filter_map(|s| s.metrics.get(&key).copied())
            .collect();
        if !vals.is_empty() {
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            aggregate.insert(
                key,
                Aggregate {
                    mean,
                    median: median(&mut vals),
                },
            );
        }
    }
    Ok(EvalReport {
        protocol: protocol.name().to_string(),
        alignment: opts.alignment.name().to_string(),
        per_sequence,
        aggregate,
    })
}
