use super::graph::ROPE_BASE;
use super::{Element, Graph, TensorError, Var};

/// Token positions for rotary embedding inside [`attention`].
///
/// `Flat` rotates the full per-head feature with one position per token.
/// `Grid` splits each head's feature in half and rotates the first half by
/// the row coordinate and the second half by the column coordinate, which is
/// how 2-d patch positions are encoded. Tokens without a meaningful position
/// (the pose token, state tokens) use position 0, i.e. the identity rotation.
#[derive(Clone, Debug)]
pub enum RopePos {
    Flat(Vec<f64>),
    Grid(Vec<[f64; 2]>),
}

impl RopePos {
    fn len(&self) -> usize {
        match self {
            RopePos::Flat(p) => p.len(),
            RopePos::Grid(p) => p.len(),
        }
    }
}

/// Apply rotary embedding to a `(tokens, d)` tensor with 1-d positions.
pub fn rope_apply<T: Element>(
    g: &mut Graph<T>,
    x: Var,
    positions: &[f64],
) -> Result<Var, TensorError> {
    g.rope(x, positions, ROPE_BASE)
}

fn apply_rope_plan<T: Element>(
    g: &mut Graph<T>,
    x: Var,
    pos: &RopePos,
) -> Result<Var, TensorError> {
    match pos {
        RopePos::Flat(p) => g.rope(x, p, ROPE_BASE),
        RopePos::Grid(p) => {
            let d = *g.shape(x).last().unwrap();
            if d % 4 != 0 {
                return Err(TensorError::BadShape {
                    op: "rope",
                    expected: "a head dimension divisible by 4 for 2-d positions".into(),
                    got: g.shape(x).to_vec(),
                });
            }
            let half = d / 2;
            let rows: Vec<f64> = p.iter().map(|q| q[0]).collect();
            let cols: Vec<f64> = p.iter().map(|q| q[1]).collect();
            let parts = g.split(x, 1, &[half, half])?;
            let a = g.rope(parts[0], &rows, ROPE_BASE)?;
            let b = g.rope(parts[1], &cols, ROPE_BASE)?;
            g.concat(1, &[a, b])
        }
    }
}

/// Scaled dot-product multi-head attention with rotary embedding applied to
/// the query and key features of each head. `q`, `k`, `v` are `(tokens, d)`
/// projections; `k` and `v` must agree on token count. Position `None` skips
/// the rotation for that side.
pub fn attention<T: Element>(
    g: &mut Graph<T>,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    q_pos: Option<&RopePos>,
    k_pos: Option<&RopePos>,
) -> Result<Var, TensorError> {
    let (qs, ks, vs) = (
        g.shape(q).to_vec(),
        g.shape(k).to_vec(),
        g.shape(v).to_vec(),
    );
    if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 {
        return Err(TensorError::BadShape {
            op: "attention",
            expected: "2-d q, k, v".into(),
            got: qs,
        });
    }
    if heads == 0 || qs[1] % heads != 0 || ks[1] % heads != 0 || vs[1] % heads != 0 {
        return Err(TensorError::BadShape {
            op: "attention",
            expected: format!("feature dims divisible by {heads} heads"),
            got: vec![qs[1], ks[1], vs[1]],
        });
    }
    if ks[0] != vs[0] {
        return Err(TensorError::ShapeMismatch {
            op: "attention",
            left: ks,
            right: vs,
        });
    }
    if qs[1] != ks[1] {
        return Err(TensorError::ShapeMismatch {
            op: "attention",
            left: qs,
            right: ks,
        });
    }
    if let Some(p) = q_pos {
        if p.len() != qs[0] {
            return Err(TensorError::BadShape {
                op: "attention",
                expected: format!("{} query positions", qs[0]),
                got: vec![p.len()],
            });
        }
    }
    if let Some(p) = k_pos {
        if p.len() != ks[0] {
            return Err(TensorError::BadShape {
                op: "attention",
                expected: format!("{} key positions", ks[0]),
                got: vec![p.len()],
            });
        }
    }

    let dh = qs[1] / heads;
    let dv = vs[1] / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let mut qh = g.slice(q, 1, h * dh, dh)?;
        let mut kh = g.slice(k, 1, h * dh, dh)?;
        let vh = g.slice(v, 1, h * dv, dv)?;
        if let Some(p) = q_pos {
            qh = apply_rope_plan(g, qh, p)?;
        }
        if let Some(p) = k_pos {
            kh = apply_rope_plan(g, kh, p)?;
        }
        let kt = g.transpose(kh)?;
        let logits = g.matmul(qh, kt)?;
        let scaled = g.scalar_mul(logits, scale)?;
        let weights = g.softmax(scaled)?;
        outs.push(g.matmul(weights, vh)?);
    }
    g.concat(1, &outs)
}
