//! Tensor container file, shared by checkpoints and datasets.
//!
//! Layout, bit-exact: magic `PTM1`, one `u8` dtype code (0 = f32, 1 = f64),
//! one `u8` ndim, then `ndim` little-endian `u32` extents, then the
//! row-major little-endian payload.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use super::Element;

const MAGIC: [u8; 4] = *b"PTM1";

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Dtype> {
        match c {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: bad magic, not a tensor container")]
    BadMagic { path: String },
    #[error("{path}: unsupported dtype code {code}")]
    BadDtype { path: String, code: u8 },
    #[error("{path}: dtype {found} does not match expected {expected}")]
    DtypeMismatch {
        path: String,
        found: &'static str,
        expected: &'static str,
    },
    #[error("{path}: truncated payload, expected {expected} bytes, found {found}")]
    Truncated {
        path: String,
        expected: usize,
        found: usize,
    },
}

/// Serialize a tensor to the container byte layout.
pub fn tensor_bytes<T: Element>(t: &ArrayD<T>) -> Vec<u8> {
    let shape = t.shape();
    assert!(shape.len() <= u8::MAX as usize, "too many dimensions");
    let mut out = Vec::with_capacity(6 + 4 * shape.len() + t.len() * T::BYTE_WIDTH);
    out.extend_from_slice(&MAGIC);
    out.push(T::DTYPE.code());
    out.push(shape.len() as u8);
    for &e in shape {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    // Standard (row-major) layout is an invariant of graph values and
    // parameters; fall back to a copy for views that are not.
    match t.as_slice() {
        Some(s) => {
            for &v in s {
                v.write_le(&mut out);
            }
        }
        None => {
            for &v in t.iter() {
                v.write_le(&mut out);
            }
        }
    }
    out
}

pub fn write_tensor<T: Element>(path: &Path, t: &ArrayD<T>) -> Result<(), ContainerError> {
    let bytes = tensor_bytes(t);
    let mut f = std::fs::File::create(path).map_err(|source| ContainerError::Io {
        path: path.display().to_string(),
        source,
    })?;
    f.write_all(&bytes).map_err(|source| ContainerError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parse a tensor of element type `T` from container bytes. The stored dtype
/// must match `T` exactly; no conversion happens on load.
pub fn tensor_from_bytes<T: Element>(
    bytes: &[u8],
    path: &str,
) -> Result<ArrayD<T>, ContainerError> {
    let fail_trunc = |expected: usize| ContainerError::Truncated {
        path: path.to_string(),
        expected,
        found: bytes.len(),
    };
    if bytes.len() < 6 {
        return Err(fail_trunc(6));
    }
    if bytes[0..4] != MAGIC {
        return Err(ContainerError::BadMagic {
            path: path.to_string(),
        });
    }
    let dtype = Dtype::from_code(bytes[4]).ok_or(ContainerError::BadDtype {
        path: path.to_string(),
        code: bytes[4],
    })?;
    if dtype != T::DTYPE {
        return Err(ContainerError::DtypeMismatch {
            path: path.to_string(),
            found: dtype.name(),
            expected: T::DTYPE.name(),
        });
    }
    let ndim = bytes[5] as usize;
    let header = 6 + 4 * ndim;
    if bytes.len() < header {
        return Err(fail_trunc(header));
    }
    let mut shape = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let o = 6 + 4 * i;
        shape.push(u32::from_le_bytes([
            bytes[o],
            bytes[o + 1],
            bytes[o + 2],
            bytes[o + 3],
        ]) as usize);
    }
    let n: usize = shape.iter().product();
    let expected = header + n * T::BYTE_WIDTH;
    if bytes.len() != expected {
        return Err(fail_trunc(expected));
    }
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        data.push(T::read_le(&bytes[header + i * T::BYTE_WIDTH..]));
    }
    Ok(ArrayD::from_shape_vec(IxDyn(&shape), data).expect("shape/product checked"))
}

pub fn read_tensor<T: Element>(path: &Path) -> Result<ArrayD<T>, ContainerError> {
    let mut f = std::fs::File::open(path).map_err(|source| ContainerError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes).map_err(|source| ContainerError::Io {
        path: path.display().to_string(),
        source,
    })?;
    tensor_from_bytes(&bytes, &path.display().to_string())
}
