//! Parameterized building blocks. Each struct holds parameter ids into the
//! model's [`ParamStore`]; forward methods take the graph plus the bound
//! parameter vars, so the same weights can serve any number of concurrent
//! graphs.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::tensor::{attention, Bound, Element, Graph, PId, ParamStore, RopePos, TensorError, Var};

/// Truncated normal (±2σ) init, the ViT default.
pub fn trunc_normal<T: Element>(
    rng: &mut ChaCha12Rng,
    shape: &[usize],
    std: f64,
) -> ArrayD<T> {
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    while data.len() < n {
        let u1: f64 = rng.random::<f64>().max(1e-12);
        let u2: f64 = rng.random::<f64>();
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        if z.abs() <= 2.0 {
            data.push(T::from_f64(z * std));
        }
    }
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape")
}

pub fn zeros<T: Element>(shape: &[usize]) -> ArrayD<T> {
    ArrayD::zeros(IxDyn(shape))
}

pub fn ones<T: Element>(shape: &[usize]) -> ArrayD<T> {
    ArrayD::from_elem(IxDyn(shape), T::one())
}

pub const INIT_STD: f64 = 0.02;

pub struct Linear {
    pub w: PId,
    pub b: PId,
}

impl Linear {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha12Rng,
        name: &str,
        din: usize,
        dout: usize,
    ) -> Linear {
        Linear {
            w: store.add(format!("{name}.weight"), trunc_normal(rng, &[din, dout], INIT_STD)),
            b: store.add(format!("{name}.bias"), zeros(&[dout])),
        }
    }

    pub fn forward<T: Element>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        x: Var,
    ) -> Result<Var, TensorError> {
        g.linear(x, b[self.w], b[self.b])
    }
}

pub struct LayerNormP {
    pub gain: PId,
    pub bias: PId,
}

impl LayerNormP {
    pub fn new<T: Element>(store: &mut ParamStore<T>, name: &str, d: usize) -> LayerNormP {
        LayerNormP {
            gain: store.add(format!("{name}.gain"), ones(&[d])),
            bias: store.add(format!("{name}.bias"), zeros(&[d])),
        }
    }

    pub fn forward<T: Element>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        x: Var,
    ) -> Result<Var, TensorError> {
        g.layer_norm(x, b[self.gain], b[self.bias])
    }
}

/// Layer norm whose gain/bias come affinely from a conditioning vector.
/// Initialized to the identity modulation (gain 1, bias 0 regardless of the
/// conditioner) so training starts from plain normalization.
pub struct ModLayerNorm {
    pub w_gain: PId,
    pub b_gain: PId,
    pub w_bias: PId,
    pub b_bias: PId,
}

impl ModLayerNorm {
    pub fn new<T: Element>(store: &mut ParamStore<T>, name: &str, d: usize) -> ModLayerNorm {
        ModLayerNorm {
            w_gain: store.add(format!("{name}.gain_weight"), zeros(&[d, d])),
            b_gain: store.add(format!("{name}.gain_bias"), ones(&[d])),
            w_bias: store.add(format!("{name}.bias_weight"), zeros(&[d, d])),
            b_bias: store.add(format!("{name}.bias_bias"), zeros(&[d])),
        }
    }

    pub fn forward<T: Element>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        x: Var,
        z: Var,
    ) -> Result<Var, TensorError> {
        g.modulated_layer_norm(x, z, b[self.w_gain], b[self.b_gain], b[self.w_bias], b[self.b_bias])
    }
}

pub struct AttentionP {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

impl AttentionP {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha12Rng,
        name: &str,
        d: usize,
        heads: usize,
    ) -> AttentionP {
        AttentionP {
            wq: Linear::new(store, rng, &format!("{name}.q"), d, d),
            wk: Linear::new(store, rng, &format!("{name}.k"), d, d),
            wv: Linear::new(store, rng, &format!("{name}.v"), d, d),
            wo: Linear::new(store, rng, &format!("{name}.out"), d, d),
            heads,
        }
    }

    /// Project, attend, project back. `q_src` and `kv_src` already carry any
    /// pre-normalization.
    pub fn forward<T: Element>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        q_src: Var,
        kv_src: Var,
        q_pos: Option<&RopePos>,
        k_pos: Option<&RopePos>,
    ) -> Result<Var, TensorError> {
        let q = self.wq.forward(g, b, q_src)?;
        let k = self.wk.forward(g, b, kv_src)?;
        let v = self.wv.forward(g, b, kv_src)?;
        let att = attention(g, q, k, v, self.heads, q_pos, k_pos)?;
        self.wo.forward(g, b, att)
    }
}

pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha12Rng,
        name: &str,
        d: usize,
        hidden: usize,
    ) -> Mlp {
        Mlp {
            fc1: Linear::new(store, rng, &format!("{name}.fc1"), d, hidden),
            fc2: Linear::new(store, rng, &format!("{name}.fc2"), hidden, d),
        }
    }

    pub fn forward<T: Element>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        x: Var,
    ) -> Result<Var, TensorError> {
        let h = self.fc1.forward(g, b, x)?;
        let a = g.gelu(h)?;
        self.fc2.forward(g, b, a)
    }
}

/// Pre-norm self-attention + MLP block (encoder).
pub struct EncBlock {
    pub norm1: LayerNormP,
    pub attn: AttentionP,
    pub norm2: LayerNormP,
    pub mlp: Mlp,
}

impl EncBlock {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha12Rng,
        name: &str,
        d: usize,
        heads: usize,
    ) -> EncBlock {
        EncBlock {
            norm1: LayerNormP::new(store, &format!("{name}.norm1"), d),
            attn: AttentionP::new(store, rng, &format!("{name}.attn"), d, heads),
            norm2: LayerNormP::new(store, &format!("{name}.norm2"), d),
            mlp: Mlp::new(store, rng, &format!("{name}.mlp"), d, 4 * d),
        }
    }

    pub fn forward<T: Element>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        x: Var,
        pos: Option<&RopePos>,
    ) -> Result<Var, TensorError> {
        let h = self.norm1.forward(g, b, x)?;
        let a = self.attn.forward(g, b, h, h, pos, pos)?;
        let x = g.add(x, a)?;
        let h = self.norm2.forward(g, b, x)?;
        let m = self.mlp.forward(g, b, h)?;
        g.add(x, m)
    }
}

/// One side of an interconnected decoder block: self-attention, then
/// cross-attention into the other side's activations, then MLP, all
/// pre-norm residual.
pub struct DecBlock {
    pub norm1: LayerNormP,
    pub self_attn: AttentionP,
    pub norm_q: LayerNormP,
    pub norm_kv: LayerNormP,
    pub cross_attn: AttentionP,
    pub norm2: LayerNormP,
    pub mlp: Mlp,
}

impl DecBlock {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha12Rng,
        name: &str,
        d: usize,
        heads: usize,
    ) -> DecBlock {
        DecBlock {
            norm1: LayerNormP::new(store, &format!("{name}.norm1"), d),
            self_attn: AttentionP::new(store, rng, &format!("{name}.self_attn"), d, heads),
            norm_q: LayerNormP::new(store, &format!("{name}.norm_q"), d),
            norm_kv: LayerNormP::new(store, &format!("{name}.norm_kv"), d),
            cross_attn: AttentionP::new(store, rng, &format!("{name}.cross_attn"), d, heads),
            norm2: LayerNormP::new(store, &format!("{name}.norm2"), d),
            mlp: Mlp::new(store, rng, &format!("{name}.mlp"), d, 4 * d),
        }
    }

    /// Self-attention sublayer only; the caller interleaves both sides so
    /// that cross-attention sees the other side's post-self-attention
    /// activations of the same block index.
    pub fn self_part<T: Element>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        x: Var,
        pos: Option<&RopePos>,
    ) -> Result<Var, TensorError> {
        let h = self.norm1.forward(g, b, x)?;
        let a = self.self_attn.forward(g, b, h, h, pos, pos)?;
        g.add(x, a)
    }

    /// Cross-attention into `other`, then the MLP sublayer.
    pub fn cross_and_mlp<T: Element>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        x: Var,
        other: Var,
        pos: Option<&RopePos>,
        other_pos: Option<&RopePos>,
    ) -> Result<Var, TensorError> {
        let q = self.norm_q.forward(g, b, x)?;
        let kv = self.norm_kv.forward(g, b, other)?;
        let c = self.cross_attn.forward(g, b, q, kv, pos, other_pos)?;
        let x = g.add(x, c)?;
        let h = self.norm2.forward(g, b, x)?;
        let m = self.mlp.forward(g, b, h)?;
        g.add(x, m)
    }
}

/// Self-attention block whose layer norms are modulated by a conditioning
/// vector (the pose token readout).
pub struct ModBlock {
    pub mod1: ModLayerNorm,
    pub attn: AttentionP,
    pub mod2: ModLayerNorm,
    pub mlp: Mlp,
}

impl ModBlock {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha12Rng,
        name: &str,
        d: usize,
        heads: usize,
    ) -> ModBlock {
        ModBlock {
            mod1: ModLayerNorm::new(store, &format!("{name}.mod1"), d),
            attn: AttentionP::new(store, rng, &format!("{name}.attn"), d, heads),
            mod2: ModLayerNorm::new(store, &format!("{name}.mod2"), d),
            mlp: Mlp::new(store, rng, &format!("{name}.mlp"), d, 4 * d),
        }
    }

    pub fn forward<T: Element>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        x: Var,
        z: Var,
        pos: Option<&RopePos>,
    ) -> Result<Var, TensorError> {
        let h = self.mod1.forward(g, b, x, z)?;
        let a = self.attn.forward(g, b, h, h, pos, pos)?;
        let x = g.add(x, a)?;
        let h = self.mod2.forward(g, b, x, z)?;
        let m = self.mlp.forward(g, b, h)?;
        g.add(x, m)
    }
}
