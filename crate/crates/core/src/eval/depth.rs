use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{median, EvalError};

/// How predictions are aligned to the ground truth before scoring.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthAlignment {
    /// Raw metric comparison.
    None,
    /// Per-frame scale from the ratio of depth medians.
    PerFrameMedian,
    /// One least-squares scale over the whole sequence.
    PerSeqScale,
    /// Least-squares scale and shift over the whole sequence.
    PerSeqScaleShift,
}

impl DepthAlignment {
    pub fn name(self) -> &'static str {
        match self {
            DepthAlignment::None => "none",
            DepthAlignment::PerFrameMedian => "per_frame_median",
            DepthAlignment::PerSeqScale => "per_seq_scale",
            DepthAlignment::PerSeqScaleShift => "per_seq_scale_shift",
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DepthReport {
    /// Mean of |d̂ − d| / d over valid pixels.
    pub abs_rel: f64,
    /// Fraction of valid pixels with max(d̂/d, d/d̂) < 1.25.
    pub delta: f64,
    pub alignment: DepthAlignment,
}

const DELTA_THRESHOLD: f64 = 1.25;

/// Depth accuracy over a sequence of frames. `valid` masks pixels with
/// usable ground truth (gt > 0 required).
pub fn depth_metrics(
    pred: &[Array2<f64>],
    gt: &[Array2<f64>],
    valid: &[Array2<bool>],
    alignment: DepthAlignment,
) -> Result<DepthReport, EvalError> {
    if pred.len() != gt.len() || pred.len() != valid.len() {
        return Err(EvalError::LengthMismatch {
            left: pred.len(),
            right: gt.len(),
        });
    }
    if pred.is_empty() {
        return Err(EvalError::Empty {
            detail: "no frames".into(),
        });
    }

    // Aligned copies of the predictions.
    let mut aligned: Vec<Array2<f64>> = pred.to_vec();
    match alignment {
        DepthAlignment::None => {}
        DepthAlignment::PerFrameMedian => {
            for ((p, g), m) in aligned.iter_mut().zip(gt.iter()).zip(valid.iter()) {
                let mut pv = Vec::new();
                let mut gv = Vec::new();
                for ((pp, gg), &ok) in p.iter().zip(g.iter()).zip(m.iter()) {
                    if ok {
                        pv.push(*pp);
                        gv.push(*gg);
                    }
                }
                if pv.is_empty() {
                    return Err(EvalError::Empty {
                        detail: "per-frame median scaling needs at least one valid pixel per frame"
                            .into(),
                    });
                }
                let mp = median(&mut pv);
                let mg = median(&mut gv);
                if mp.abs() < 1e-12 {
                    return Err(EvalError::Empty {
                        detail: "degenerate prediction median".into(),
                    });
                }
                let s = mg / mp;
                p.mapv_inplace(|v| v * s);
            }
        }
        DepthAlignment::PerSeqScale => {
            let mut num = 0.0;
            let mut den = 0.0;
            for ((p, g), m) in pred.iter().zip(gt.iter()).zip(valid.iter()) {
                for ((pp, gg), &ok) in p.iter().zip(g.iter()).zip(m.iter()) {
                    if ok {
                        num += pp * gg;
                        den += pp * pp;
                    }
                }
            }
            if den <= 0.0 {
                return Err(EvalError::Empty {
                    detail: "no valid pixels for scale alignment".into(),
                });
            }
            let s = num / den;
            for p in aligned.iter_mut() {
                p.mapv_inplace(|v| v * s);
            }
        }
        DepthAlignment::PerSeqScaleShift => {
            let (mut spp, mut sp, mut spg, mut sg, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for ((p, g), m) in pred.iter().zip(gt.iter()).zip(valid.iter()) {
                for ((pp, gg), &ok) in p.iter().zip(g.iter()).zip(m.iter()) {
                    if ok {
                        spp += pp * pp;
                        sp += pp;
                        spg += pp * gg;
                        sg += gg;
                        n += 1.0;
                    }
                }
            }
            let det = spp * n - sp * sp;
            if n == 0.0 || det.abs() < 1e-12 {
                return Err(EvalError::Empty {
                    detail: "degenerate scale-and-shift system".into(),
                });
            }
            let a = (spg * n - sp * sg) / det;
            let b = (spp * sg - sp * spg) / det;
            for p in aligned.iter_mut() {
                p.mapv_inplace(|v| a * v + b);
            }
        }
    }

    let mut abs_rel_sum = 0.0;
    let mut within = 0usize;
    let mut count = 0usize;
    for ((p, g), m) in aligned.iter().zip(gt.iter()).zip(valid.iter()) {
        for ((pp, gg), &ok) in p.iter().zip(g.iter()).zip(m.iter()) {
            if !ok || *gg <= 0.0 {
                continue;
            }
            abs_rel_sum += (pp - gg).abs() / gg;
            if *pp > 0.0 {
                let ratio = (pp / gg).max(gg / pp);
                if ratio < DELTA_THRESHOLD {
                    within += 1;
                }
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(EvalError::Empty {
            detail: "no valid pixels".into(),
        });
    }
    Ok(DepthReport {
        abs_rel: abs_rel_sum / count as f64,
        delta: within as f64 / count as f64,
        alignment,
    })
}
