//! ASCII PLY export of accumulated pointmaps.

use ndarray::{Array2, Array3};

use crate::geometry::Pointmap;

#[derive(Debug, thiserror::Error)]
pub enum PlyError {
    #[error("empty export: no point clears confidence threshold {threshold}")]
    Empty { threshold: f64 },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// One frame's contribution to a cloud export.
pub struct PlyFrame<'a> {
    pub points: &'a Pointmap,
    /// `(H, W, 3)` colors in `[0, 1]`.
    pub colors: &'a Array3<f64>,
    pub confidence: &'a Array2<f64>,
}

/// Serialize valid points above the confidence threshold as ASCII PLY, one
/// `x y z red green blue confidence` line per point, frame-major row-major
/// order. Identical inputs produce byte-identical output.
pub fn export_ply(frames: &[PlyFrame<'_>], threshold: f64) -> Result<String, PlyError> {
    let mut lines = Vec::new();
    for f in frames {
        let (h, w) = f.confidence.dim();
        for v in 0..h {
            for u in 0..w {
                if !f.points.valid[[v, u]] || f.confidence[[v, u]] < threshold {
                    continue;
                }
                let to_u8 = |c: f64| (c.clamp(0.0, 1.0) * 255.0).round() as u8;
                lines.push(format!(
                    "{} {} {} {} {} {} {}",
                    f.points.points[[v, u, 0]],
                    f.points.points[[v, u, 1]],
                    f.points.points[[v, u, 2]],
                    to_u8(f.colors[[v, u, 0]]),
                    to_u8(f.colors[[v, u, 1]]),
                    to_u8(f.colors[[v, u, 2]]),
                    f.confidence[[v, u]],
                ));
            }
        }
    }
    if lines.is_empty() {
        return Err(PlyError::Empty { threshold });
    }
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    out.push_str(&format!("element vertex {}\n", lines.len()));
    out.push_str("property float x\nproperty float y\nproperty float z\n");
    out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    out.push_str("property float confidence\nend_header\n");
    for line in lines {
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_ply(path: &std::path::Path, frames: &[PlyFrame<'_>], threshold: f64) -> Result<(), PlyError> {
    let text = export_ply(frames, threshold)?;
    std::fs::write(path, text).map_err(|source| PlyError::Io {
        path: path.display().to_string(),
        source,
    })
}
