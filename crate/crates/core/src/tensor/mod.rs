//! Differentiable tensor computation.
//!
//! The model is composed from a closed set of primitive operations recorded
//! on a [`Graph`] (a tape). Every primitive has a reverse-mode gradient;
//! [`Graph::backward`] walks the tape once and accumulates gradients into
//! every node that requires them. Values are plain row-major [`ndarray`]
//! arrays; once a node is created its value is never mutated, so graphs can
//! be built and dropped freely and read-shared across threads.
//!
//! Reductions accumulate sequentially in row-major order and every forward
//! op is a pure function of its inputs, so identical inputs produce
//! bit-identical outputs within one build.

mod attention;
mod backward;
mod container;
mod gradcheck;
mod graph;
mod param;

pub use attention::{attention, rope_apply, RopePos};
pub use container::{read_tensor, tensor_bytes, tensor_from_bytes, write_tensor, ContainerError, Dtype};
pub use gradcheck::{gradient_check, GradCheckError, GRAD_CHECK_H};
pub use graph::{Graph, TensorError, Var};
pub use param::{Bound, PId, ParamStore, Parameter};

use ndarray::ScalarOperand;

/// Scalar element type of the substrate: `f32` for training, `f64` for
/// gradient verification.
pub trait Element:
    num_traits::Float
    + ndarray::LinalgScalar
    + ScalarOperand
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    const DTYPE: Dtype;
    /// Bytes per element in the container format.
    const BYTE_WIDTH: usize;

    fn from_f64(v: f64) -> Self;
    fn from_f32(v: f32) -> Self;
    fn to_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE: Dtype = Dtype::F32;
    const BYTE_WIDTH: usize = 4;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn from_f32(v: f32) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

impl Element for f64 {
    const DTYPE: Dtype = Dtype::F64;
    const BYTE_WIDTH: usize = 8;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes([
            bytes[0], bytes[1], bytes[2], bytes[3], bytes[4], bytes[5], bytes[6], bytes[7],
        ])
    }
}
