use ndarray::{Array2, ArrayD, ArrayView2, ArrayViewD, Axis, Ix1, Ix2, IxDyn, Slice};

use super::Element;

// Parallelizing individual ops was measured to hurt on small desk-scale
// shapes; concurrency lives at the sequence level in the trainer instead.
pub(crate) fn matmul2<T: Element>(a: &ArrayView2<'_, T>, b: &ArrayView2<'_, T>) -> Array2<T> {
    a.dot(b)
}

/// Epsilon inside the layer-norm variance square root.
pub(crate) const LAYER_NORM_EPS: f64 = 1e-6;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(pub(crate) u32);

impl Var {
    pub(crate) fn idx(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected {expected}, got shape {got:?}")]
    BadShape {
        op: &'static str,
        expected: String,
        got: Vec<usize>,
    },
    #[error("numeric fault: non-finite value produced by {op}")]
    NumericFault { op: &'static str },
    #[error("backward requires a scalar loss, got shape {got:?}")]
    NonScalarLoss { got: Vec<usize> },
}

pub(crate) enum Op<T: Element> {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScalarMul(Var, f64),
    ScalarAdd(Var),
    AddBias(Var, Var),
    Concat { axis: usize, inputs: Vec<Var> },
    Slice { input: Var, axis: usize, start: usize },
    Transpose(Var),
    Reshape(Var),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var },
    Gelu { input: Var, tanh_u: Vec<T> },
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Recip(Var),
    Sigmoid(Var),
    SumAll(Var),
    MeanAll(Var),
    SumAxis(Var, usize),
    MeanAxis(Var, usize),
    L2NormLast(Var),
    GatherRows { input: Var, indices: Vec<usize> },
    Rope { input: Var, cos: Vec<T>, sin: Vec<T> },
    ScaleByVar(Var, Var),
}

pub(crate) struct Node<T: Element> {
    pub value: ArrayD<T>,
    pub op: Op<T>,
    pub needs_grad: bool,
}

/// Reverse-mode tape. Nodes are appended in execution order, which is also a
/// topological order, so one reverse sweep suffices for the backward pass.
pub struct Graph<T: Element> {
    pub(crate) nodes: Vec<Node<T>>,
    checked: bool,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            checked: false,
        }
    }

    /// Enable non-finite detection: every op output is scanned and a
    /// [`TensorError::NumericFault`] is raised on NaN/inf.
    pub fn set_checked(&mut self, on: bool) {
        self.checked = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &ArrayD<T> {
        &self.nodes[v.idx()].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.idx()].value.shape()
    }

    /// Scalar value of a 1-element node.
    pub fn scalar(&self, v: Var) -> T {
        *self.nodes[v.idx()]
            .value
            .iter()
            .next()
            .expect("scalar() on empty tensor")
    }

    fn push(&mut self, value: ArrayD<T>, op: Op<T>, needs_grad: bool, name: &'static str) -> Result<Var, TensorError> {
        if self.checked && !value.iter().all(|x| x.is_finite()) {
            return Err(TensorError::NumericFault { op: name });
        }
        // Node values are always standard (row-major) layout; some ndarray
        // constructors (concatenate in particular) return other layouts.
        let value = if value.is_standard_layout() {
            value
        } else {
            value.as_standard_layout().to_owned()
        };
        let id = Var(self.nodes.len() as u32);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(id)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.idx()].needs_grad
    }

    /// Insert a leaf node. `requires_grad` leaves receive gradients.
    pub fn leaf(&mut self, value: ArrayD<T>, requires_grad: bool) -> Var {
        let value = if value.is_standard_layout() {
            value
        } else {
            value.as_standard_layout().to_owned()
        };
        let id = Var(self.nodes.len() as u32);
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        id
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, value: ArrayD<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn constant_scalar(&mut self, v: f64) -> Var {
        self.constant(ArrayD::from_elem(IxDyn(&[]), T::from_f64(v)))
    }

    fn as2(&self, v: Var, op: &'static str) -> Result<ndarray::ArrayView2<'_, T>, TensorError> {
        self.nodes[v.idx()]
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .map_err(|_| TensorError::BadShape {
                op,
                expected: "a 2-d tensor".into(),
                got: self.shape(v).to_vec(),
            })
    }

    /// Matrix product of two 2-d tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let av = self.as2(a, "matmul")?;
        let bv = self.as2(b, "matmul")?;
        if av.ncols() != bv.nrows() {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let out = matmul2(&av, &bv).into_dyn();
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Matmul(a, b), ng, "matmul")
    }

    fn zip_same_shape(
        &mut self,
        a: Var,
        b: Var,
        op: &'static str,
        f: impl Fn(T, T) -> T,
        mk: impl Fn(Var, Var) -> Op<T>,
    ) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let mut out = self.nodes[a.idx()].value.clone();
        out.zip_mut_with(&self.nodes[b.idx()].value, |x, &y| *x = f(*x, y));
        let ng = self.needs(a) || self.needs(b);
        self.push(out, mk(a, b), ng, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_same_shape(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_same_shape(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_same_shape(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn scalar_mul(&mut self, x: Var, c: f64) -> Result<Var, TensorError> {
        let cc = T::from_f64(c);
        let out = self.nodes[x.idx()].value.mapv(|v| v * cc);
        let ng = self.needs(x);
        self.push(out, Op::ScalarMul(x, c), ng, "scalar_mul")
    }

    pub fn scalar_add(&mut self, x: Var, c: f64) -> Result<Var, TensorError> {
        let cc = T::from_f64(c);
        let out = self.nodes[x.idx()].value.mapv(|v| v + cc);
        let ng = self.needs(x);
        self.push(out, Op::ScalarAdd(x), ng, "scalar_add")
    }

    /// `x + b` where `x` is `(n, d)` and `b` is `(d,)`, broadcast over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, TensorError> {
        let xv = self.as2(x, "add_bias")?;
        let bv = self.nodes[b.idx()]
            .value
            .view()
            .into_dimensionality::<Ix1>()
            .map_err(|_| TensorError::BadShape {
                op: "add_bias",
                expected: "a 1-d bias".into(),
                got: self.shape(b).to_vec(),
            })?;
        if xv.ncols() != bv.len() {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                left: self.shape(x).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let out = (&xv + &bv).into_dyn();
        let ng = self.needs(x) || self.needs(b);
        self.push(out, Op::AddBias(x, b), ng, "add_bias")
    }

    /// `matmul(x, w) + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    pub fn concat(&mut self, axis: usize, inputs: &[Var]) -> Result<Var, TensorError> {
        if inputs.is_empty() {
            return Err(TensorError::BadShape {
                op: "concat",
                expected: "at least one input".into(),
                got: vec![],
            });
        }
        let views: Vec<ArrayViewD<'_, T>> =
            inputs.iter().map(|v| self.nodes[v.idx()].value.view()).collect();
        let out = ndarray::concatenate(Axis(axis), &views).map_err(|_| TensorError::ShapeMismatch {
            op: "concat",
            left: self.shape(inputs[0]).to_vec(),
            right: self.shape(*inputs.last().unwrap()).to_vec(),
        })?;
        let ng = inputs.iter().any(|&v| self.needs(v));
        self.push(
            out,
            Op::Concat {
                axis,
                inputs: inputs.to_vec(),
            },
            ng,
            "concat",
        )
    }

    /// Contiguous range along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(TensorError::BadShape {
                op: "slice",
                expected: format!("axis {axis} range {start}..{} in bounds", start + len),
                got: shape,
            });
        }
        let out = self.nodes[x.idx()]
            .value
            .slice_axis(Axis(axis), Slice::from(start..start + len))
            .to_owned();
        let ng = self.needs(x);
        self.push(out, Op::Slice { input: x, axis, start }, ng, "slice")
    }

    /// Split along `axis` into parts of the given extents.
    pub fn split(&mut self, x: Var, axis: usize, parts: &[usize]) -> Result<Vec<Var>, TensorError> {
        let total: usize = parts.iter().sum();
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || total != shape[axis] {
            return Err(TensorError::BadShape {
                op: "split",
                expected: format!("parts summing to extent of axis {axis}"),
                got: shape,
            });
        }
        let mut out = Vec::with_capacity(parts.len());
        let mut start = 0;
        for &len in parts {
            out.push(self.slice(x, axis, start, len)?);
            start += len;
        }
        Ok(out)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let xv = self.as2(x, "transpose")?;
        let out = xv.t().as_standard_layout().to_owned().into_dyn();
        let ng = self.needs(x);
        self.push(out, Op::Transpose(x), ng, "transpose")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let n: usize = shape.iter().product();
        if n != self.nodes[x.idx()].value.len() {
            return Err(TensorError::BadShape {
                op: "reshape",
                expected: format!("target {:?} with matching element count", shape),
                got: self.shape(x).to_vec(),
            });
        }
        let out = self.nodes[x.idx()]
            .value
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .expect("element count checked");
        let ng = self.needs(x);
        self.push(out, Op::Reshape(x), ng, "reshape")
    }

    /// Softmax over the last axis. Rows are shifted by their max before
    /// exponentiation; outputs are strictly positive and sum to one.
    pub fn softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() || *shape.last().unwrap() == 0 {
            return Err(TensorError::BadShape {
                op: "softmax",
                expected: "a nonempty last axis".into(),
                got: shape,
            });
        }
        let mut out = self.nodes[x.idx()].value.clone();
        let d = *shape.last().unwrap();
        let softmax_row = |row: &mut [T]| {
            let max = row.iter().fold(T::neg_infinity(), |m, &v| if v > m { v } else { m });
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum = sum + *v;
            }
            for v in row.iter_mut() {
                *v = *v / sum;
            }
        };
        match out.as_slice_mut() {
            Some(flat) => {
                for row in flat.chunks_mut(d) {
                    softmax_row(row);
                }
            }
            None => {
                for mut row in out.rows_mut() {
                    softmax_row(row.as_slice_mut().expect("standard layout"));
                }
            }
        }
        let ng = self.needs(x);
        self.push(out, Op::Softmax(x), ng, "softmax")
    }

    /// Layer normalization over the last axis with learnable gain and bias
    /// (1-d, length = last extent). `modulated_layer_norm` builds on this by
    /// deriving gain/bias from a conditioning vector.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, TensorError> {
        let d = *self.shape(x).last().ok_or_else(|| TensorError::BadShape {
            op: "layer_norm",
            expected: "at least one axis".into(),
            got: vec![],
        })?;
        for (v, what) in [(gain, "gain"), (bias, "bias")] {
            let s = self.shape(v);
            if s != [d] {
                return Err(TensorError::BadShape {
                    op: "layer_norm",
                    expected: format!("{what} of shape [{d}]"),
                    got: s.to_vec(),
                });
            }
        }
        let eps = T::from_f64(LAYER_NORM_EPS);
        let gv = self.nodes[gain.idx()].value.clone();
        let bv = self.nodes[bias.idx()].value.clone();
        let mut out = self.nodes[x.idx()].value.clone();
        let inv_d = T::one() / T::from_f64(d as f64);
        for mut row in out.rows_mut() {
            let mut mean = T::zero();
            for &v in row.iter() {
                mean = mean + v;
            }
            mean = mean * inv_d;
            let mut var = T::zero();
            for &v in row.iter() {
                let c = v - mean;
                var = var + c * c;
            }
            var = var * inv_d;
            let rstd = T::one() / (var + eps).sqrt();
            for (i, v) in row.iter_mut().enumerate() {
                let xhat = (*v - mean) * rstd;
                *v = xhat * gv[i] + bv[i];
            }
        }
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        self.push(out, Op::LayerNorm { x, gain, bias }, ng, "layer_norm")
    }

    /// Layer norm whose gain and bias are affine functions of a conditioning
    /// vector `z` (shape `(1, d)`): gain = z·wg + bg, bias = z·wb + bb.
    #[allow(clippy::too_many_arguments)]
    pub fn modulated_layer_norm(
        &mut self,
        x: Var,
        z: Var,
        w_gain: Var,
        b_gain: Var,
        w_bias: Var,
        b_bias: Var,
    ) -> Result<Var, TensorError> {
        let d = *self.shape(x).last().unwrap_or(&0);
        let gain2 = self.linear(z, w_gain, b_gain)?;
        let bias2 = self.linear(z, w_bias, b_bias)?;
        let gain = self.reshape(gain2, &[d])?;
        let bias = self.reshape(bias2, &[d])?;
        self.layer_norm(x, gain, bias)
    }

    fn unary(
        &mut self,
        x: Var,
        op: &'static str,
        f: impl Fn(T) -> T,
        mk: impl Fn(Var) -> Op<T>,
    ) -> Result<Var, TensorError> {
        let out = self.nodes[x.idx()].value.mapv(f);
        let ng = self.needs(x);
        self.push(out, mk(x), ng, op)
    }

    /// GELU, tanh approximation. The inner tanh is cached for the
    /// backward pass.
    pub fn gelu(&mut self, x: Var) -> Result<Var, TensorError> {
        let xv = &self.nodes[x.idx()].value;
        let k = T::from_f64(0.797_884_560_802_865_4);
        let c = T::from_f64(0.044_715);
        let half = T::from_f64(0.5);
        let mut tanh_u = Vec::with_capacity(xv.len());
        let mut data = Vec::with_capacity(xv.len());
        for &v in xv.iter() {
            let t = (k * (v + c * v * v * v)).tanh();
            tanh_u.push(t);
            data.push(half * v * (T::one() + t));
        }
        let out = ArrayD::from_shape_vec(xv.raw_dim(), data).expect("same length");
        let ng = self.needs(x);
        self.push(out, Op::Gelu { input: x, tanh_u }, ng, "gelu")
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(x, "exp", |v| v.exp(), Op::Exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(x, "log", |v| v.ln(), Op::Log)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(x, "sqrt", |v| v.sqrt(), Op::Sqrt)
    }

    pub fn recip(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(x, "recip", |v| T::one() / v, Op::Recip)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(x, "sigmoid", sigmoid_scalar, Op::Sigmoid)
    }

    /// Sum of all elements, sequential row-major accumulation; 0-d result.
    pub fn sum_all(&mut self, x: Var) -> Result<Var, TensorError> {
        let mut s = T::zero();
        for &v in self.nodes[x.idx()].value.iter() {
            s = s + v;
        }
        let ng = self.needs(x);
        self.push(ArrayD::from_elem(IxDyn(&[]), s), Op::SumAll(x), ng, "sum_all")
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var, TensorError> {
        let n = self.nodes[x.idx()].value.len();
        if n == 0 {
            return Err(TensorError::BadShape {
                op: "mean_all",
                expected: "a nonempty tensor".into(),
                got: self.shape(x).to_vec(),
            });
        }
        let mut s = T::zero();
        for &v in self.nodes[x.idx()].value.iter() {
            s = s + v;
        }
        s = s / T::from_f64(n as f64);
        let ng = self.needs(x);
        self.push(ArrayD::from_elem(IxDyn(&[]), s), Op::MeanAll(x), ng, "mean_all")
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        if axis >= self.shape(x).len() {
            return Err(TensorError::BadShape {
                op: "sum_axis",
                expected: format!("axis {axis} in bounds"),
                got: self.shape(x).to_vec(),
            });
        }
        let out = self.nodes[x.idx()].value.sum_axis(Axis(axis));
        let ng = self.needs(x);
        self.push(out, Op::SumAxis(x, axis), ng, "sum_axis")
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(TensorError::BadShape {
                op: "mean_axis",
                expected: format!("nonempty axis {axis}"),
                got: shape,
            });
        }
        let inv = T::one() / T::from_f64(shape[axis] as f64);
        let out = self.nodes[x.idx()].value.sum_axis(Axis(axis)).mapv(|v| v * inv);
        let ng = self.needs(x);
        self.push(out, Op::MeanAxis(x, axis), ng, "mean_axis")
    }

    /// Euclidean norm over the last axis. The gradient at an exactly zero
    /// vector is defined as zero (a valid subgradient).
    pub fn l2_norm_last(&mut self, x: Var) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() {
            return Err(TensorError::BadShape {
                op: "l2_norm_last",
                expected: "at least one axis".into(),
                got: shape,
            });
        }
        let xv = &self.nodes[x.idx()].value;
        let out_shape = &shape[..shape.len() - 1];
        let mut data = Vec::with_capacity(xv.len() / shape[shape.len() - 1]);
        for row in xv.rows() {
            let mut s = T::zero();
            for &v in row.iter() {
                s = s + v * v;
            }
            data.push(s.sqrt());
        }
        let out = ArrayD::from_shape_vec(IxDyn(out_shape), data).expect("shape");
        let ng = self.needs(x);
        self.push(out, Op::L2NormLast(x), ng, "l2_norm_last")
    }

    /// Select rows of a 2-d tensor. Duplicate indices accumulate gradient.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var, TensorError> {
        let xv = self.as2(x, "gather_rows")?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= xv.nrows()) {
            return Err(TensorError::BadShape {
                op: "gather_rows",
                expected: format!("row indices < {}, found {bad}", xv.nrows()),
                got: self.shape(x).to_vec(),
            });
        }
        let mut out = ndarray::Array2::<T>::zeros((indices.len(), xv.ncols()));
        for (i, &idx) in indices.iter().enumerate() {
            out.row_mut(i).assign(&xv.row(idx));
        }
        let ng = self.needs(x);
        self.push(
            out.into_dyn(),
            Op::GatherRows {
                input: x,
                indices: indices.to_vec(),
            },
            ng,
            "gather_rows",
        )
    }

    /// Rotary positional embedding over a `(tokens, d)` tensor with one
    /// position per token. Consecutive feature pairs `(2i, 2i+1)` are rotated
    /// by `position * base^(-2i/d)`. Preserves per-token norms.
    pub fn rope(&mut self, x: Var, positions: &[f64], base: f64) -> Result<Var, TensorError> {
        let xv = self.as2(x, "rope")?;
        let d = xv.ncols();
        if d % 2 != 0 {
            return Err(TensorError::BadShape {
                op: "rope",
                expected: "an even last dimension".into(),
                got: self.shape(x).to_vec(),
            });
        }
        if positions.len() != xv.nrows() {
            return Err(TensorError::BadShape {
                op: "rope",
                expected: format!("{} positions", xv.nrows()),
                got: vec![positions.len()],
            });
        }
        let (cos, sin) = rope_tables::<T>(positions, d, base);
        let out = rope_apply_tables(&xv, &cos, &sin, false);
        let ng = self.needs(x);
        self.push(out.into_dyn(), Op::Rope { input: x, cos, sin }, ng, "rope")
    }

    /// Multiply a tensor by a 1-element scalar tensor.
    pub fn scale_by_var(&mut self, x: Var, s: Var) -> Result<Var, TensorError> {
        if self.nodes[s.idx()].value.len() != 1 {
            return Err(TensorError::BadShape {
                op: "scale_by_var",
                expected: "a 1-element scale".into(),
                got: self.shape(s).to_vec(),
            });
        }
        let sv = self.scalar(s);
        let out = self.nodes[x.idx()].value.mapv(|v| v * sv);
        let ng = self.needs(x) || self.needs(s);
        self.push(out, Op::ScaleByVar(x, s), ng, "scale_by_var")
    }
}

pub(crate) const ROPE_BASE: f64 = 10000.0;

/// Per-token, per-pair rotation tables: `cos`/`sin` of `position * freq_i`
/// laid out `(token, pair)` row-major.
pub(crate) fn rope_tables<T: Element>(positions: &[f64], d: usize, base: f64) -> (Vec<T>, Vec<T>) {
    let half = d / 2;
    let mut freqs = Vec::with_capacity(half);
    for i in 0..half {
        freqs.push(base.powf(-2.0 * i as f64 / d as f64));
    }
    let mut cos = Vec::with_capacity(positions.len() * half);
    let mut sin = Vec::with_capacity(positions.len() * half);
    for &p in positions {
        for &f in &freqs {
            let a = p * f;
            cos.push(T::from_f64(a.cos()));
            sin.push(T::from_f64(a.sin()));
        }
    }
    (cos, sin)
}

/// Rotate consecutive feature pairs by the table angles; `invert` applies
/// the transpose (negated-angle) rotation.
pub(crate) fn rope_apply_tables<T: Element>(
    x: &ArrayView2<'_, T>,
    cos: &[T],
    sin: &[T],
    invert: bool,
) -> Array2<T> {
    let half = x.ncols() / 2;
    let mut out = x.to_owned();
    for (t, mut row) in out.rows_mut().into_iter().enumerate() {
        for i in 0..half {
            let c = cos[t * half + i];
            let mut s = sin[t * half + i];
            if invert {
                s = T::zero() - s;
            }
            let a = row[2 * i];
            let b = row[2 * i + 1];
            row[2 * i] = a * c - b * s;
            row[2 * i + 1] = a * s + b * c;
        }
    }
    out
}

pub(crate) fn sigmoid_scalar<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
