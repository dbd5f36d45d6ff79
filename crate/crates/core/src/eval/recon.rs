use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{median, EvalError};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ReconReport {
    /// Distance from predicted points to their nearest ground truth point.
    pub acc_mean: f64,
    pub acc_median: f64,
    /// Distance from ground truth points to their nearest prediction.
    pub comp_mean: f64,
    pub comp_median: f64,
    /// |cos| between normals of matched points, in [0, 1].
    pub nc_mean: f64,
    pub nc_median: f64,
}

/// Index of and distance to the nearest neighbor in `cloud`, brute force.
fn nearest(p: Vector3<f64>, cloud: &[Vector3<f64>]) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (i, q) in cloud.iter().enumerate() {
        let d = (p - q).norm_squared();
        if d < best.1 {
            best = (i, d);
        }
    }
    (best.0, best.1.sqrt())
}

/// Per-point unit normals by PCA over the k nearest neighbors (including
/// the point itself). Sign is arbitrary; consumers compare |cos|.
fn pca_normals(cloud: &[Vector3<f64>], k: usize) -> Vec<Vector3<f64>> {
    let n = cloud.len();
    let mut normals = Vec::with_capacity(n);
    let mut dist_idx: Vec<(f64, usize)> = Vec::with_capacity(n);
    for (i, p) in cloud.iter().enumerate() {
        dist_idx.clear();
        for (j, q) in cloud.iter().enumerate() {
            dist_idx.push(((p - q).norm_squared(), j));
        }
        dist_idx.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let neigh = &dist_idx[..k.min(n)];
        let mut mean = Vector3::zeros();
        for &(_, j) in neigh {
            mean += cloud[j];
        }
        mean /= neigh.len() as f64;
        let mut cov = Matrix3::zeros();
        for &(_, j) in neigh {
            let d = cloud[j] - mean;
            cov += d * d.transpose();
        }
        let eig = cov.symmetric_eigen();
        // Eigenvector of the smallest eigenvalue.
        let mut min_i = 0;
        for c in 1..3 {
            if eig.eigenvalues[c] < eig.eigenvalues[min_i] {
                min_i = c;
            }
        }
        let v = eig.eigenvectors.column(min_i).into_owned();
        let norm = v.norm();
        normals.push(if norm > 0.0 { v / norm } else { Vector3::new(0.0, 0.0, 1.0) });
        let _ = i;
    }
    normals
}

/// Accuracy, completion and normal consistency between two point clouds.
pub fn recon_metrics(
    pred: &[Vector3<f64>],
    gt: &[Vector3<f64>],
    k_normals: usize,
) -> Result<ReconReport, EvalError> {
    if k_normals < 3 {
        return Err(EvalError::TooFew {
            need: 3,
            got: k_normals,
        });
    }
    if pred.len() < k_normals || gt.len() < k_normals {
        return Err(EvalError::TooFew {
            need: k_normals,
            got: pred.len().min(gt.len()),
        });
    }
    let pred_normals = pca_normals(pred, k_normals);
    let gt_normals = pca_normals(gt, k_normals);

    let mut acc = Vec::with_capacity(pred.len());
    let mut nc = Vec::with_capacity(pred.len());
    for (i, p) in pred.iter().enumerate() {
        let (j, d) = nearest(*p, gt);
        acc.push(d);
        nc.push(pred_normals[i].dot(&gt_normals[j]).abs());
    }
    let mut comp = Vec::with_capacity(gt.len());
    for q in gt.iter() {
        let (_, d) = nearest(*q, pred);
        comp.push(d);
    }

    let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    Ok(ReconReport {
        acc_mean: mean(&acc),
        acc_median: median(&mut acc.clone()),
        comp_mean: mean(&comp),
        comp_median: median(&mut comp.clone()),
        nc_mean: mean(&nc),
        nc_median: median(&mut nc.clone()),
    })
}
