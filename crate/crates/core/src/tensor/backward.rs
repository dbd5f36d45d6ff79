use ndarray::{ArrayD, Axis, Ix2, IxDyn, Slice};

use super::graph::{matmul2, rope_apply_tables, Op, LAYER_NORM_EPS};
use super::{Element, Graph, TensorError, Var};

/// Per-node gradients produced by one backward pass.
pub struct Gradients<T: Element> {
    grads: Vec<Option<ArrayD<T>>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of the loss w.r.t. `v`, if `v` required one.
    pub fn get(&self, v: Var) -> Option<&ArrayD<T>> {
        self.grads.get(v.idx()).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<ArrayD<T>> {
        self.grads.get_mut(v.idx()).and_then(|g| g.take())
    }
}

impl<T: Element> Graph<T> {
    /// Reverse sweep from a scalar loss. Gradients accumulate into every node
    /// on the path to a grad-requiring leaf; the tape order is topological so
    /// a single reverse iteration visits each node after all its consumers.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        let n = self.nodes.len();
        if self.nodes[loss.idx()].value.len() != 1 {
            return Err(TensorError::NonScalarLoss {
                got: self.nodes[loss.idx()].value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<ArrayD<T>>> = (0..n).map(|_| None).collect();
        let seed_shape = self.nodes[loss.idx()].value.shape().to_vec();
        grads[loss.idx()] = Some(ArrayD::from_elem(IxDyn(&seed_shape), T::one()));

        for i in (0..n).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            let g = if g.is_standard_layout() {
                g
            } else {
                g.as_standard_layout().to_owned()
            };
            self.accumulate(i, &g, &mut grads);
            // Leaves keep their gradient for the caller.
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn add_into(&self, grads: &mut [Option<ArrayD<T>>], v: Var, delta: ArrayD<T>) {
        if !self.nodes[v.idx()].needs_grad {
            return;
        }
        match &mut grads[v.idx()] {
            Some(g) => g.zip_mut_with(&delta, |a, &b| *a = *a + b),
            slot @ None => *slot = Some(delta),
        }
    }

    fn accumulate(&self, i: usize, g: &ArrayD<T>, grads: &mut [Option<ArrayD<T>>]) {
        let val = |v: Var| &self.nodes[v.idx()].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let av = val(*a).view().into_dimensionality::<Ix2>().unwrap();
                let bv = val(*b).view().into_dimensionality::<Ix2>().unwrap();
                if self.nodes[a.idx()].needs_grad {
                    self.add_into(grads, *a, matmul2(&g2, &bv.t()).into_dyn());
                }
                if self.nodes[b.idx()].needs_grad {
                    self.add_into(grads, *b, matmul2(&av.t(), &g2).into_dyn());
                }
            }
            Op::Add(a, b) => {
                self.add_into(grads, *a, g.clone());
                self.add_into(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.add_into(grads, *a, g.clone());
                self.add_into(grads, *b, g.mapv(|v| T::zero() - v));
            }
            Op::Mul(a, b) => {
                if self.nodes[a.idx()].needs_grad {
                    let mut d = g.clone();
                    d.zip_mut_with(val(*b), |x, &y| *x = *x * y);
                    self.add_into(grads, *a, d);
                }
                if self.nodes[b.idx()].needs_grad {
                    let mut d = g.clone();
                    d.zip_mut_with(val(*a), |x, &y| *x = *x * y);
                    self.add_into(grads, *b, d);
                }
            }
            Op::ScalarMul(a, c) => {
                let cc = T::from_f64(*c);
                self.add_into(grads, *a, g.mapv(|v| v * cc));
            }
            Op::ScalarAdd(a) => {
                self.add_into(grads, *a, g.clone());
            }
            Op::AddBias(x, b) => {
                self.add_into(grads, *x, g.clone());
                if self.nodes[b.idx()].needs_grad {
                    let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                    let mut db = ndarray::Array1::<T>::zeros(g2.ncols());
                    for row in g2.rows() {
                        db.zip_mut_with(&row, |a, &b| *a = *a + b);
                    }
                    self.add_into(grads, *b, db.into_dyn());
                }
            }
            Op::Concat { axis, inputs } => {
                let mut start = 0;
                for &v in inputs {
                    let len = self.nodes[v.idx()].value.shape()[*axis];
                    if self.nodes[v.idx()].needs_grad {
                        let piece = g
                            .slice_axis(Axis(*axis), Slice::from(start..start + len))
                            .to_owned();
                        self.add_into(grads, v, piece);
                    }
                    start += len;
                }
            }
            Op::Slice { input, axis, start } => {
                if self.nodes[input.idx()].needs_grad {
                    let mut d = ArrayD::<T>::zeros(self.nodes[input.idx()].value.raw_dim());
                    let len = self.nodes[i].value.shape()[*axis];
                    d.slice_axis_mut(Axis(*axis), Slice::from(*start..start + len))
                        .assign(g);
                    self.add_into(grads, *input, d);
                }
            }
            Op::Transpose(x) => {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                self.add_into(
                    grads,
                    *x,
                    g2.t().as_standard_layout().to_owned().into_dyn(),
                );
            }
            Op::Reshape(x) => {
                let target = self.nodes[x.idx()].value.shape().to_vec();
                let d = g
                    .clone()
                    .into_shape_with_order(IxDyn(&target))
                    .expect("reshape backward");
                self.add_into(grads, *x, d);
            }
            Op::Softmax(x) => {
                // dx = y * (g - sum(g * y)) per row
                let y = &self.nodes[i].value;
                let mut d = g.clone();
                let rows = y.len() / y.shape().last().copied().unwrap_or(1);
                let dlast = y.shape().last().copied().unwrap_or(1);
                let yf = y.as_slice().expect("standard layout");
                let df = d.as_slice_mut().expect("standard layout");
                for r in 0..rows {
                    let o = r * dlast;
                    let mut dot = T::zero();
                    for j in 0..dlast {
                        dot = dot + df[o + j] * yf[o + j];
                    }
                    for j in 0..dlast {
                        df[o + j] = yf[o + j] * (df[o + j] - dot);
                    }
                }
                self.add_into(grads, *x, d);
            }
            Op::LayerNorm { x, gain, bias } => {
                let xv = val(*x);
                let d = *xv.shape().last().unwrap();
                let rows = xv.len() / d;
                let eps = T::from_f64(LAYER_NORM_EPS);
                let inv_d = T::one() / T::from_f64(d as f64);
                let gv = val(*gain).as_slice().unwrap().to_vec();
                let xf = xv.as_slice().expect("standard layout");
                let gf = g.as_slice().expect("standard layout");

                let mut dx = vec![T::zero(); xv.len()];
                let mut dgain = vec![T::zero(); d];
                let mut dbias = vec![T::zero(); d];
                for r in 0..rows {
                    let o = r * d;
                    let mut mean = T::zero();
                    for j in 0..d {
                        mean = mean + xf[o + j];
                    }
                    mean = mean * inv_d;
                    let mut var = T::zero();
                    for j in 0..d {
                        let c = xf[o + j] - mean;
                        var = var + c * c;
                    }
                    var = var * inv_d;
                    let rstd = T::one() / (var + eps).sqrt();
                    // dy/dxhat = gain; reduce the two projection terms.
                    let mut sum_dxhat = T::zero();
                    let mut sum_dxhat_xhat = T::zero();
                    for j in 0..d {
                        let xhat = (xf[o + j] - mean) * rstd;
                        let dy = gf[o + j];
                        let dxhat = dy * gv[j];
                        sum_dxhat = sum_dxhat + dxhat;
                        sum_dxhat_xhat = sum_dxhat_xhat + dxhat * xhat;
                        dgain[j] = dgain[j] + dy * xhat;
                        dbias[j] = dbias[j] + dy;
                    }
                    for j in 0..d {
                        let xhat = (xf[o + j] - mean) * rstd;
                        let dxhat = gf[o + j] * gv[j];
                        dx[o + j] =
                            rstd * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
                    }
                }
                if self.nodes[x.idx()].needs_grad {
                    self.add_into(
                        grads,
                        *x,
                        ArrayD::from_shape_vec(xv.raw_dim(), dx).unwrap(),
                    );
                }
                if self.nodes[gain.idx()].needs_grad {
                    self.add_into(
                        grads,
                        *gain,
                        ArrayD::from_shape_vec(IxDyn(&[d]), dgain).unwrap(),
                    );
                }
                if self.nodes[bias.idx()].needs_grad {
                    self.add_into(
                        grads,
                        *bias,
                        ArrayD::from_shape_vec(IxDyn(&[d]), dbias).unwrap(),
                    );
                }
            }
            Op::Gelu { input, tanh_u } => {
                // d/dx [0.5 x (1 + t)] with t = tanh(u(x)) cached from the
                // forward pass; only polynomials remain.
                let k = T::from_f64(0.797_884_560_802_865_4);
                let c = T::from_f64(0.044_715);
                let half = T::from_f64(0.5);
                let three = T::from_f64(3.0);
                let xv = val(*input);
                let xf = xv.as_slice().expect("standard layout");
                let gf = g.as_slice().expect("standard layout");
                let mut d = vec![T::zero(); xf.len()];
                for i in 0..xf.len() {
                    let x = xf[i];
                    let t = tanh_u[i];
                    let sech2 = T::one() - t * t;
                    let grad = half * (T::one() + t)
                        + half * x * sech2 * k * (T::one() + three * c * x * x);
                    d[i] = gf[i] * grad;
                }
                self.add_into(
                    grads,
                    *input,
                    ArrayD::from_shape_vec(xv.raw_dim(), d).unwrap(),
                );
            }
            Op::Exp(x) => {
                // d/dx e^x = e^x (the stored output)
                let mut d = g.clone();
                d.zip_mut_with(&self.nodes[i].value, |a, &b| *a = *a * b);
                self.add_into(grads, *x, d);
            }
            Op::Log(x) => {
                let mut d = g.clone();
                d.zip_mut_with(val(*x), |a, &b| *a = *a / b);
                self.add_into(grads, *x, d);
            }
            Op::Sqrt(x) => {
                // d/dx sqrt = 1/(2 sqrt) via the stored output
                let half = T::from_f64(0.5);
                let mut d = g.clone();
                d.zip_mut_with(&self.nodes[i].value, |a, &b| *a = *a * half / b);
                self.add_into(grads, *x, d);
            }
            Op::Recip(x) => {
                // d/dx (1/x) = -1/x^2 = -(out)^2
                let mut d = g.clone();
                d.zip_mut_with(&self.nodes[i].value, |a, &b| *a = T::zero() - *a * b * b);
                self.add_into(grads, *x, d);
            }
            Op::Sigmoid(x) => {
                let mut d = g.clone();
                d.zip_mut_with(&self.nodes[i].value, |a, &b| {
                    *a = *a * b * (T::one() - b)
                });
                self.add_into(grads, *x, d);
            }
            Op::SumAll(x) => {
                let gs = *g.iter().next().unwrap();
                let shape = self.nodes[x.idx()].value.raw_dim();
                self.add_into(grads, *x, ArrayD::from_elem(shape, gs));
            }
            Op::MeanAll(x) => {
                let n = self.nodes[x.idx()].value.len();
                let gs = *g.iter().next().unwrap() / T::from_f64(n as f64);
                let shape = self.nodes[x.idx()].value.raw_dim();
                self.add_into(grads, *x, ArrayD::from_elem(shape, gs));
            }
            Op::SumAxis(x, axis) => {
                let shape = self.nodes[x.idx()].value.raw_dim();
                let mut d = ArrayD::<T>::zeros(shape);
                for mut lane in d.axis_iter_mut(Axis(*axis)) {
                    lane.zip_mut_with(g, |a, &b| *a = *a + b);
                }
                self.add_into(grads, *x, d);
            }
            Op::MeanAxis(x, axis) => {
                let shape = self.nodes[x.idx()].value.raw_dim();
                let n = T::from_f64(shape[*axis] as f64);
                let mut d = ArrayD::<T>::zeros(shape);
                for mut lane in d.axis_iter_mut(Axis(*axis)) {
                    lane.zip_mut_with(g, |a, &b| *a = *a + b / n);
                }
                self.add_into(grads, *x, d);
            }
            Op::L2NormLast(x) => {
                let xv = val(*x);
                let d = *xv.shape().last().unwrap();
                let y = &self.nodes[i].value;
                let xf = xv.as_slice().expect("standard layout");
                let yf = y.as_slice().expect("standard layout");
                let gf = g.as_slice().expect("standard layout");
                let mut dx = vec![T::zero(); xv.len()];
                for r in 0..yf.len() {
                    let norm = yf[r];
                    if norm == T::zero() {
                        continue; // subgradient 0 at the origin
                    }
                    let o = r * d;
                    for j in 0..d {
                        dx[o + j] = gf[r] * xf[o + j] / norm;
                    }
                }
                self.add_into(
                    grads,
                    *x,
                    ArrayD::from_shape_vec(xv.raw_dim(), dx).unwrap(),
                );
            }
            Op::GatherRows { input, indices } => {
                if self.nodes[input.idx()].needs_grad {
                    let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                    let shape = self.nodes[input.idx()].value.raw_dim();
                    let mut d = ArrayD::<T>::zeros(shape);
                    let mut d2 = d.view_mut().into_dimensionality::<Ix2>().unwrap();
                    for (r, &idx) in indices.iter().enumerate() {
                        let mut row = d2.row_mut(idx);
                        row.zip_mut_with(&g2.row(r), |a, &b| *a = *a + b);
                    }
                    self.add_into(grads, *input, d);
                }
            }
            Op::Rope { input, cos, sin } => {
                // The inverse rotation of the output gradient.
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let d = rope_apply_tables(&g2, cos, sin, true);
                self.add_into(grads, *input, d.into_dyn());
            }
            Op::ScaleByVar(x, s) => {
                let sv = *val(*s).iter().next().unwrap();
                if self.nodes[x.idx()].needs_grad {
                    self.add_into(grads, *x, g.mapv(|v| v * sv));
                }
                if self.nodes[s.idx()].needs_grad {
                    let mut ds = T::zero();
                    for (gv, xv) in g.iter().zip(val(*x).iter()) {
                        ds = ds + *gv * *xv;
                    }
                    let shape = self.nodes[s.idx()].value.raw_dim();
                    self.add_into(grads, *s, ArrayD::from_elem(shape, ds));
                }
            }
        }
    }
}
