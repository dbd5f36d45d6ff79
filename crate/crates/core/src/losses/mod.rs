//! Training objective: confidence-aware pointmap regression, pose loss, RGB
//! loss, and scale normalization.
//!
//! Every loss exists twice: a plain f64 reference implementation used for
//! reporting and as the oracle in tests, and a graph builder
//! ([`sequence_loss_g`]) that produces differentiable vars for training.
//! Normalization factors divide both sides of the regression; for
//! metric-scale ground truth the prediction factor is forced to the ground
//! truth factor (`s_pred := s_gt`), which is what makes the model learn
//! absolute scale. Losses are means (not sums) over valid pixels and frames
//! so magnitudes are resolution independent.

use ndarray::{Array2, Array3};

use crate::geometry::{Pointmap, Pose};
use crate::model::StepVars;
use crate::tensor::{Element, Graph, TensorError, Var};

#[derive(Debug, thiserror::Error)]
pub enum LossError {
    #[error("empty supervision: no valid pixels or supervised frames")]
    EmptySupervision,
    #[error("length mismatch: {left} predictions vs {right} ground truths")]
    LengthMismatch { left: usize, right: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("normalization factor must be positive, got {value}")]
    NonPositiveFactor { value: f64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Loss weights and the metric-scale rule.
#[derive(Clone, Debug)]
pub struct LossConfig {
    /// Confidence regularizer weight.
    pub alpha: f64,
    pub w_pose: f64,
    pub w_rgb: f64,
    /// Ground truth is in known metric units for this sequence.
    pub metric_flag: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.2,
            w_pose: 1.0,
            w_rgb: 1.0,
            metric_flag: false,
        }
    }
}

/// Scale normalization factors of a sequence. `metric_flag` forces
/// `s_pred = s_gt`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizationFactors {
    pub s_gt: f64,
    pub s_pred: f64,
}

impl NormalizationFactors {
    pub fn validate(&self) -> Result<(), LossError> {
        for v in [self.s_gt, self.s_pred] {
            if !(v > 0.0) {
                return Err(LossError::NonPositiveFactor { value: v });
            }
        }
        Ok(())
    }
}

/// Mean Euclidean norm over the valid points of a set of (world-frame)
/// pointmaps: the sequence scale.
pub fn scale_norm_factor(pointmaps: &[&Pointmap], masks: &[&Array2<bool>]) -> Result<f64, LossError> {
    if pointmaps.len() != masks.len() {
        return Err(LossError::LengthMismatch {
            left: pointmaps.len(),
            right: masks.len(),
        });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (pm, mask) in pointmaps.iter().zip(masks.iter()) {
        let (h, w) = mask.dim();
        if pm.points.dim() != (h, w, 3) {
            return Err(LossError::ShapeMismatch {
                left: pm.points.shape().to_vec(),
                right: vec![h, w],
            });
        }
        for v in 0..h {
            for u in 0..w {
                if mask[[v, u]] {
                    let (x, y, z) = (
                        pm.points[[v, u, 0]],
                        pm.points[[v, u, 1]],
                        pm.points[[v, u, 2]],
                    );
                    sum += (x * x + y * y + z * z).sqrt();
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(LossError::EmptySupervision);
    }
    Ok(sum / count as f64)
}

/// One frame of pointmap supervision for the reference loss.
pub struct PointmapLossFrame<'a> {
    pub pred: &'a Pointmap,
    pub conf: &'a Array2<f64>,
    pub gt: &'a Pointmap,
    pub mask: &'a Array2<bool>,
}

fn set_mean(
    frames: &[PointmapLossFrame<'_>],
    factors: &NormalizationFactors,
    alpha: f64,
) -> Result<f64, LossError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for f in frames {
        let (h, w) = f.mask.dim();
        if f.pred.points.dim() != (h, w, 3) || f.gt.points.dim() != (h, w, 3) {
            return Err(LossError::ShapeMismatch {
                left: f.pred.points.shape().to_vec(),
                right: f.gt.points.shape().to_vec(),
            });
        }
        for v in 0..h {
            for u in 0..w {
                if !f.mask[[v, u]] {
                    continue;
                }
                let mut sq = 0.0;
                for c in 0..3 {
                    let d = f.pred.points[[v, u, c]] / factors.s_pred
                        - f.gt.points[[v, u, c]] / factors.s_gt;
                    sq += d * d;
                }
                let cf = f.conf[[v, u]];
                sum += cf * sq.sqrt() - alpha * cf.ln();
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(LossError::EmptySupervision);
    }
    Ok(sum / count as f64)
}

/// Confidence-aware regression loss: per valid pixel
/// `c·‖x̂/ŝ − x/s‖₂ − α·log c`, averaged over the pooled valid pixels of
/// each set, self-frame and world-frame terms summed.
pub fn conf_regression_loss(
    self_frames: &[PointmapLossFrame<'_>],
    world_frames: &[PointmapLossFrame<'_>],
    factors: &NormalizationFactors,
    alpha: f64,
) -> Result<f64, LossError> {
    factors.validate()?;
    Ok(set_mean(self_frames, factors, alpha)? + set_mean(world_frames, factors, alpha)?)
}

/// Pose loss: mean over frames of quaternion L2 (sign-aligned to the ground
/// truth, which is invariant under the quaternion double cover) plus
/// scale-normalized translation L2.
pub fn pose_loss(
    pred: &[Pose],
    gt: &[Pose],
    factors: &NormalizationFactors,
) -> Result<f64, LossError> {
    if pred.len() != gt.len() {
        return Err(LossError::LengthMismatch {
            left: pred.len(),
            right: gt.len(),
        });
    }
    if pred.is_empty() {
        return Err(LossError::EmptySupervision);
    }
    factors.validate()?;
    let mut sum = 0.0;
    for (p, q) in pred.iter().zip(gt.iter()) {
        let dot: f64 = p.q.iter().zip(q.q.iter()).map(|(a, b)| a * b).sum();
        let sign = if dot < 0.0 { -1.0 } else { 1.0 };
        let mut qsq = 0.0;
        for i in 0..4 {
            let d = p.q[i] - sign * q.q[i];
            qsq += d * d;
        }
        let mut tsq = 0.0;
        for i in 0..3 {
            let d = p.t[i] / factors.s_pred - q.t[i] / factors.s_gt;
            tsq += d * d;
        }
        sum += qsq.sqrt() + tsq.sqrt();
    }
    Ok(sum / pred.len() as f64)
}

/// Mean squared error over all pixels and channels.
pub fn rgb_loss(pred: &Array3<f64>, gt: &Array3<f64>) -> Result<f64, LossError> {
    if pred.dim() != gt.dim() {
        return Err(LossError::ShapeMismatch {
            left: pred.shape().to_vec(),
            right: gt.shape().to_vec(),
        });
    }
    let n = pred.len();
    if n == 0 {
        return Err(LossError::EmptySupervision);
    }
    let mut sum = 0.0;
    for (a, b) in pred.iter().zip(gt.iter()) {
        let d = a - b;
        sum += d * d;
    }
    Ok(sum / n as f64)
}

/// One frame's ground truth for the combined loss. Absent fields mean the
/// corresponding supervision does not exist for this frame.
pub struct FrameSupervision<'a> {
    pub pred: &'a crate::model::PredictionSet,
    pub gt_self: Option<&'a Pointmap>,
    pub gt_world: Option<&'a Pointmap>,
    pub gt_pose: Option<&'a Pose>,
    /// `(H, W, 3)` color target; present for raymap-queried frames.
    pub gt_color: Option<&'a Array3<f64>>,
}

#[derive(Clone, Debug)]
pub struct LossBreakdown {
    pub total: f64,
    pub conf: Option<f64>,
    pub pose: Option<f64>,
    pub rgb: Option<f64>,
    pub factors: NormalizationFactors,
}

/// Sequence normalization factors from world-frame supervision. Falls back
/// to translation magnitudes when the sequence has no 3D annotation at all
/// (camera-only data), and to 1.0 for a static camera.
pub fn sequence_factors(
    frames: &[FrameSupervision<'_>],
    metric_flag: bool,
) -> Result<NormalizationFactors, LossError> {
    let mut gt_maps = Vec::new();
    let mut gt_masks = Vec::new();
    let mut pred_maps = Vec::new();
    for f in frames {
        if let Some(gw) = f.gt_world {
            gt_maps.push(gw);
            gt_masks.push(&gw.valid);
            pred_maps.push(&f.pred.x_world);
        }
    }
    if !gt_maps.is_empty() {
        let s_gt = scale_norm_factor(&gt_maps, &gt_masks)?;
        let s_pred = if metric_flag {
            s_gt
        } else {
            scale_norm_factor(&pred_maps, &gt_masks)?
        };
        return Ok(NormalizationFactors { s_gt, s_pred });
    }
    // Camera-only sequence: scale from translations.
    let mut gt_sum = 0.0;
    let mut pred_sum = 0.0;
    let mut count = 0usize;
    for f in frames {
        if let Some(gp) = f.gt_pose {
            let n = gp.translation().norm();
            if n > 0.0 {
                gt_sum += n;
                pred_sum += f.pred.pose.translation().norm();
                count += 1;
            }
        }
    }
    let s_gt = if count > 0 { gt_sum / count as f64 } else { 1.0 };
    let s_pred = if metric_flag || count == 0 {
        s_gt
    } else {
        (pred_sum / count as f64).max(1e-12)
    };
    Ok(NormalizationFactors {
        s_gt: s_gt.max(1e-12),
        s_pred,
    })
}

/// Weighted total `L_conf + w_pose·L_pose + w_rgb·L_rgb`, each term averaged
/// only over frames where its supervision exists.
pub fn total_loss(
    frames: &[FrameSupervision<'_>],
    cfg: &LossConfig,
) -> Result<LossBreakdown, LossError> {
    if frames.is_empty() {
        return Err(LossError::EmptySupervision);
    }
    let factors = sequence_factors(frames, cfg.metric_flag)?;

    let mut self_frames = Vec::new();
    let mut world_frames = Vec::new();
    let mut pred_poses = Vec::new();
    let mut gt_poses = Vec::new();
    let mut rgb_sum = 0.0;
    let mut rgb_count = 0usize;
    for f in frames {
        if let Some(gs) = f.gt_self {
            self_frames.push(PointmapLossFrame {
                pred: &f.pred.x_self,
                conf: &f.pred.c_self,
                gt: gs,
                mask: &gs.valid,
            });
        }
        if let Some(gw) = f.gt_world {
            world_frames.push(PointmapLossFrame {
                pred: &f.pred.x_world,
                conf: &f.pred.c_world,
                gt: gw,
                mask: &gw.valid,
            });
        }
        if let Some(gp) = f.gt_pose {
            pred_poses.push(f.pred.pose);
            gt_poses.push(*gp);
        }
        if let Some(gc) = f.gt_color {
            if let Some(pc) = &f.pred.color {
                rgb_sum += rgb_loss(pc, gc)?;
                rgb_count += 1;
            }
        }
    }

    let conf = if !self_frames.is_empty() || !world_frames.is_empty() {
        Some(conf_regression_loss(&self_frames, &world_frames, &factors, cfg.alpha)?)
    } else {
        None
    };
    let pose = if !pred_poses.is_empty() {
        Some(pose_loss(&pred_poses, &gt_poses, &factors)?)
    } else {
        None
    };
    let rgb = if rgb_count > 0 {
        Some(rgb_sum / rgb_count as f64)
    } else {
        None
    };
    if conf.is_none() && pose.is_none() && rgb.is_none() {
        return Err(LossError::EmptySupervision);
    }
    let total = conf.unwrap_or(0.0)
        + cfg.w_pose * pose.unwrap_or(0.0)
        + cfg.w_rgb * rgb.unwrap_or(0.0);
    Ok(LossBreakdown {
        total,
        conf,
        pose,
        rgb,
        factors,
    })
}

// ---------------------------------------------------------------------------
// Graph-side loss construction (training path).
// ---------------------------------------------------------------------------

/// Ground truth of one frame prepared in patch-pixel order for the graph
/// loss. `valid` has one entry per pixel.
pub struct FrameTarget<T: Element> {
    /// `(H*W, 3)` camera-frame points; `None` for camera-only frames.
    pub gt_self: Option<Array2<T>>,
    /// `(H*W, 3)` world-frame points.
    pub gt_world: Option<Array2<T>>,
    pub valid: Vec<bool>,
    pub gt_quat: Option<[f64; 4]>,
    pub gt_trans: Option<[f64; 3]>,
    /// `(H*W, 3)` color target for raymap frames.
    pub gt_color: Option<Array2<T>>,
}

/// Differentiable loss vars of one sequence.
pub struct SequenceLossVars {
    pub total: Var,
    pub conf: Option<Var>,
    pub pose: Option<Var>,
    pub rgb: Option<Var>,
    pub s_gt: f64,
}

fn mask_constant<T: Element>(g: &mut Graph<T>, valid: &[bool]) -> Var {
    let data: Vec<T> = valid
        .iter()
        .map(|&b| if b { T::one() } else { T::zero() })
        .collect();
    g.constant(ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&[valid.len()]), data).unwrap())
}

/// The in-graph prediction scale: mean norm of predicted world points over
/// the valid pixels of the supervised frames, matching
/// [`scale_norm_factor`].
fn pred_scale_var<T: Element>(
    g: &mut Graph<T>,
    steps: &[&StepVars],
    targets: &[&FrameTarget<T>],
) -> Result<Option<(Var, f64)>, LossError> {
    let mut sums = Vec::new();
    let mut count = 0usize;
    for (s, t) in steps.iter().zip(targets.iter()) {
        if t.gt_world.is_none() {
            continue;
        }
        let norms = g.l2_norm_last(s.pts_world)?;
        let mask = mask_constant(g, &t.valid);
        let masked = g.mul(norms, mask)?;
        sums.push(g.sum_all(masked)?);
        count += t.valid.iter().filter(|&&b| b).count();
    }
    if sums.is_empty() || count == 0 {
        return Ok(None);
    }
    let total = if sums.len() == 1 {
        sums[0]
    } else {
        let mut acc = sums[0];
        for &s in &sums[1..] {
            acc = g.add(acc, s)?;
        }
        acc
    };
    let mean = g.scalar_mul(total, 1.0 / count as f64)?;
    Ok(Some((mean, count as f64)))
}

fn gt_scale_value<T: Element>(targets: &[&FrameTarget<T>]) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in targets {
        if let Some(gw) = &t.gt_world {
            for (row, &ok) in gw.rows().into_iter().zip(t.valid.iter()) {
                if ok {
                    let mut sq = 0.0;
                    for &v in row.iter() {
                        let x = v.to_f64();
                        sq += x * x;
                    }
                    sum += sq.sqrt();
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        None
    } else {
        Some(sum / count as f64)
    }
}

/// Build the training loss of one sequence on the graph. `steps` are the
/// per-frame model outputs (state chained by the caller); `targets` the
/// prepared ground truth.
pub fn sequence_loss_g<T: Element>(
    g: &mut Graph<T>,
    steps: &[&StepVars],
    targets: &[&FrameTarget<T>],
    cfg: &LossConfig,
) -> Result<SequenceLossVars, LossError> {
    if steps.len() != targets.len() {
        return Err(LossError::LengthMismatch {
            left: steps.len(),
            right: targets.len(),
        });
    }
    if steps.is_empty() {
        return Err(LossError::EmptySupervision);
    }

    // Normalization factors. The ground-truth factor is a plain value; the
    // prediction factor is either the same value (metric rule) or an
    // in-graph quantity that gradients flow through.
    enum PredScale {
        ConstInv(f64),
        VarInv(Var),
    }
    let (s_gt, pred_scale) = match gt_scale_value(targets) {
        Some(s) => {
            if !(s > 0.0) {
                return Err(LossError::NonPositiveFactor { value: s });
            }
            if cfg.metric_flag {
                (s, PredScale::ConstInv(1.0 / s))
            } else {
                let (v, _) = pred_scale_var(g, steps, targets)?
                    .expect("world supervision implies valid pixels");
                let inv = g.recip(v)?;
                (s, PredScale::VarInv(inv))
            }
        }
        None => {
            // Camera-only sequence: translation-based scale.
            let mut gt_sum = 0.0;
            let mut count = 0usize;
            for t in targets {
                if let Some(tr) = t.gt_trans {
                    let n = (tr[0] * tr[0] + tr[1] * tr[1] + tr[2] * tr[2]).sqrt();
                    if n > 0.0 {
                        gt_sum += n;
                        count += 1;
                    }
                }
            }
            let s = if count > 0 { gt_sum / count as f64 } else { 1.0 };
            if cfg.metric_flag || count == 0 {
                (s, PredScale::ConstInv(1.0 / s))
            } else {
                let mut sums = Vec::new();
                for (sv, t) in steps.iter().zip(targets.iter()) {
                    if t.gt_trans.is_some() {
                        sums.push(g.l2_norm_last(sv.trans)?);
                    }
                }
                let stacked = g.concat(0, &sums)?;
                let mean = g.mean_all(stacked)?;
                let guarded = g.scalar_add(mean, 1e-12)?;
                let inv = g.recip(guarded)?;
                (s, PredScale::VarInv(inv))
            }
        }
    };

    // Scale a prediction tensor by 1/s_pred.
    let scale_pred = |g: &mut Graph<T>, x: Var| -> Result<Var, TensorError> {
        match pred_scale {
            PredScale::ConstInv(c) => g.scalar_mul(x, c),
            PredScale::VarInv(inv) => g.scale_by_var(x, inv),
        }
    };

    // Confidence-aware regression, pooled per set.
    let mut set_terms: Vec<Var> = Vec::new();
    for want_self in [true, false] {
        let mut sums = Vec::new();
        let mut count = 0usize;
        for (s, t) in steps.iter().zip(targets.iter()) {
            let (pts, conf, gt) = if want_self {
                (s.pts_self, s.conf_self, &t.gt_self)
            } else {
                (s.pts_world, s.conf_world, &t.gt_world)
            };
            let Some(gt) = gt else { continue };
            let gt_scaled = gt.mapv(|v| T::from_f64(v.to_f64() / s_gt));
            let gt_c = g.constant(gt_scaled.into_dyn());
            let pred_scaled = scale_pred(g, pts)?;
            let diff = g.sub(pred_scaled, gt_c)?;
            let r = g.l2_norm_last(diff)?;
            let cr = g.mul(conf, r)?;
            let logc = g.log(conf)?;
            let reg = g.scalar_mul(logc, cfg.alpha)?;
            let term = g.sub(cr, reg)?;
            let mask = mask_constant(g, &t.valid);
            let masked = g.mul(term, mask)?;
            sums.push(g.sum_all(masked)?);
            count += t.valid.iter().filter(|&&b| b).count();
        }
        if sums.is_empty() {
            continue;
        }
        if count == 0 {
            return Err(LossError::EmptySupervision);
        }
        let mut acc = sums[0];
        for &s in &sums[1..] {
            acc = g.add(acc, s)?;
        }
        set_terms.push(g.scalar_mul(acc, 1.0 / count as f64)?);
    }
    let conf_var = match set_terms.len() {
        0 => None,
        1 => Some(set_terms[0]),
        _ => {
            let mut acc = set_terms[0];
            for &t in &set_terms[1..] {
                acc = g.add(acc, t)?;
            }
            Some(acc)
        }
    };

    // Pose loss.
    let mut pose_terms = Vec::new();
    for (s, t) in steps.iter().zip(targets.iter()) {
        let (Some(q), Some(tr)) = (t.gt_quat, t.gt_trans) else {
            continue;
        };
        // Sign-align the target to the current prediction (double cover).
        let pq = g.value(s.quat);
        let dot: f64 = (0..4).map(|i| pq[[0, i]].to_f64() * q[i]).sum();
        let sign = if dot < 0.0 { -1.0 } else { 1.0 };
        let qc = g.constant(
            ndarray::ArrayD::from_shape_vec(
                ndarray::IxDyn(&[1, 4]),
                q.iter().map(|&v| T::from_f64(sign * v)).collect(),
            )
            .unwrap(),
        );
        let qdiff = g.sub(s.quat, qc)?;
        let qn = g.l2_norm_last(qdiff)?;

        let tc = g.constant(
            ndarray::ArrayD::from_shape_vec(
                ndarray::IxDyn(&[1, 3]),
                tr.iter().map(|&v| T::from_f64(v / s_gt)).collect(),
            )
            .unwrap(),
        );
        let t_scaled = scale_pred(g, s.trans)?;
        let tdiff = g.sub(t_scaled, tc)?;
        let tn = g.l2_norm_last(tdiff)?;
        pose_terms.push(g.add(qn, tn)?);
    }
    let pose_var = if pose_terms.is_empty() {
        None
    } else {
        let stacked = g.concat(0, &pose_terms)?;
        Some(g.mean_all(stacked)?)
    };

    // RGB loss over raymap frames, pooled.
    let mut rgb_sums = Vec::new();
    let mut rgb_count = 0usize;
    for (s, t) in steps.iter().zip(targets.iter()) {
        let (Some(cv), Some(gc)) = (s.color, &t.gt_color) else {
            continue;
        };
        let gc_c = g.constant(gc.clone().into_dyn());
        let diff = g.sub(cv, gc_c)?;
        let sq = g.mul(diff, diff)?;
        rgb_sums.push(g.sum_all(sq)?);
        rgb_count += gc.len();
    }
    let rgb_var = if rgb_sums.is_empty() {
        None
    } else {
        let mut acc = rgb_sums[0];
        for &s in &rgb_sums[1..] {
            acc = g.add(acc, s)?;
        }
        Some(g.scalar_mul(acc, 1.0 / rgb_count as f64)?)
    };

    // Weighted total.
    let mut total: Option<Var> = conf_var;
    if let Some(p) = pose_var {
        let w = g.scalar_mul(p, cfg.w_pose)?;
        total = Some(match total {
            Some(t) => g.add(t, w)?,
            None => w,
        });
    }
    if let Some(r) = rgb_var {
        let w = g.scalar_mul(r, cfg.w_rgb)?;
        total = Some(match total {
            Some(t) => g.add(t, w)?,
            None => w,
        });
    }
    let total = total.ok_or(LossError::EmptySupervision)?;
    Ok(SequenceLossVars {
        total,
        conf: conf_var,
        pose: pose_var,
        rgb: rgb_var,
        s_gt,
    })
}

#[cfg(test)]
mod tests;
