//! Patch serialization used on both sides of the model.
//!
//! Token order is row-major over the patch grid; within a token the layout
//! is `(dy, dx, channel)` row-major. The per-pixel ("pixel rows") layout is
//! the token layout reshaped to one pixel per row, so head outputs and
//! patchified supervision line up without any gather.

use ndarray::{Array2, Array3, ArrayView3};

use crate::tensor::Element;

/// `(H, W, C)` image to `(n_patches, p*p*C)` tokens.
pub fn patchify<T: Element>(img: &ArrayView3<'_, T>, p: usize) -> Array2<T> {
    let (h, w, c) = img.dim();
    debug_assert!(h % p == 0 && w % p == 0);
    let (py, px) = (h / p, w / p);
    let mut out = Array2::<T>::zeros((py * px, p * p * c));
    for pr in 0..py {
        for pc in 0..px {
            let token = pr * px + pc;
            for dy in 0..p {
                for dx in 0..p {
                    for ch in 0..c {
                        out[[token, (dy * p + dx) * c + ch]] = img[[pr * p + dy, pc * p + dx, ch]];
                    }
                }
            }
        }
    }
    out
}

/// `(n_patches * p * p, C)` pixel rows back to an `(H, W, C)` image.
pub fn unpatchify<T: Element>(
    pixels: &Array2<T>,
    h: usize,
    w: usize,
    p: usize,
) -> Array3<T> {
    let c = pixels.ncols();
    let px = w / p;
    debug_assert_eq!(pixels.nrows(), h * w);
    let mut out = Array3::<T>::zeros((h, w, c));
    for (row, pix) in pixels.rows().into_iter().enumerate() {
        let token = row / (p * p);
        let within = row % (p * p);
        let (pr, pc) = (token / px, token % px);
        let (dy, dx) = (within / p, within % p);
        for ch in 0..c {
            out[[pr * p + dy, pc * p + dx, ch]] = pix[ch];
        }
    }
    out
}

/// `(H, W, C)` image to `(H*W, C)` pixel rows in patch order. Equivalent to
/// `patchify` followed by a reshape to one pixel per row.
pub fn patch_pixels<T: Element>(img: &ArrayView3<'_, T>, p: usize) -> Array2<T> {
    let (h, w, c) = img.dim();
    let tokens = patchify(img, p);
    tokens
        .into_shape_with_order((h * w, c))
        .expect("element count preserved")
}

/// Per-pixel boolean mask serialized in the same patch order.
pub fn patch_mask(mask: &ndarray::Array2<bool>, p: usize) -> Vec<bool> {
    let (h, w) = mask.dim();
    let px = w / p;
    let mut out = Vec::with_capacity(h * w);
    for pr in 0..h / p {
        for pc in 0..px {
            for dy in 0..p {
                for dx in 0..p {
                    out.push(mask[[pr * p + dy, pc * p + dx]]);
                }
            }
        }
    }
    out
}

/// 2-d rotary positions of the patch tokens, row-major over the grid.
pub fn patch_positions(py: usize, px: usize) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(py * px);
    for r in 0..py {
        for c in 0..px {
            out.push([r as f64, c as f64]);
        }
    }
    out
}
