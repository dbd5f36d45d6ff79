use ndarray::ArrayD;

use crate::tensor::{Element, ParamStore};

#[derive(Debug, thiserror::Error)]
pub enum OptimError {
    #[error("numeric fault: non-finite gradient for parameter {name}")]
    NonFiniteGradient { name: String },
    #[error("gradient shape {got:?} does not match parameter {name} {expected:?}")]
    ShapeMismatch {
        name: String,
        got: Vec<usize>,
        expected: Vec<usize>,
    },
}

/// First/second moment estimates, indexed like the store's sorted ids.
pub struct AdamWState<T: Element> {
    pub m: Vec<ArrayD<T>>,
    pub v: Vec<ArrayD<T>>,
}

impl<T: Element> AdamWState<T> {
    pub fn zeros(store: &ParamStore<T>) -> Self {
        let zero: Vec<ArrayD<T>> = store
            .iter_sorted()
            .map(|p| ArrayD::zeros(p.value.raw_dim()))
            .collect();
        AdamWState {
            m: zero.clone(),
            v: zero,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AdamWParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// One decoupled-weight-decay Adam step over the sorted parameters.
///
/// `grads[i]` pairs with sorted parameter `i`; `None` marks a frozen
/// parameter whose value and moments stay untouched. `step` is 1-based for
/// bias correction. In checked mode a non-finite gradient aborts with the
/// parameter's name.
pub fn adamw_step<T: Element>(
    store: &mut ParamStore<T>,
    state: &mut AdamWState<T>,
    grads: &[Option<ArrayD<T>>],
    step: u64,
    p: &AdamWParams,
    checked: bool,
) -> Result<(), OptimError> {
    let ids = store.sorted_ids();
    assert_eq!(grads.len(), ids.len(), "one gradient slot per parameter");
    let bc1 = 1.0 - p.beta1.powi(step as i32);
    let bc2 = 1.0 - p.beta2.powi(step as i32);
    let (b1, b2) = (T::from_f64(p.beta1), T::from_f64(p.beta2));
    let one_m_b1 = T::from_f64(1.0 - p.beta1);
    let one_m_b2 = T::from_f64(1.0 - p.beta2);
    let eps = T::from_f64(p.eps);
    let lr = T::from_f64(p.lr);
    let decay = T::from_f64(1.0 - p.lr * p.weight_decay);
    let inv_bc1 = T::from_f64(1.0 / bc1);
    let inv_bc2 = T::from_f64(1.0 / bc2);

    for (slot, &id) in ids.iter().enumerate() {
        let Some(grad) = &grads[slot] else { continue };
        let name = || store.get(id).name.clone();
        if grad.shape() != store.get(id).value.shape() {
            return Err(OptimError::ShapeMismatch {
                name: name(),
                got: grad.shape().to_vec(),
                expected: store.get(id).value.shape().to_vec(),
            });
        }
        if checked && !grad.iter().all(|g| g.is_finite()) {
            return Err(OptimError::NonFiniteGradient { name: name() });
        }
        let m = &mut state.m[slot];
        let v = &mut state.v[slot];
        let value = store.value_mut(id);
        // One fused pass: moment updates, decoupled decay, then the
        // bias-corrected step.
        ndarray::Zip::from(&mut *value)
            .and(&mut *m)
            .and(&mut *v)
            .and(grad)
            .for_each(|w, m, v, &g| {
                *m = b1 * *m + one_m_b1 * g;
                *v = b2 * *v + one_m_b2 * g * g;
                let mhat = *m * inv_bc1;
                let vhat = *v * inv_bc2;
                *w = *w * decay - lr * mhat / (vhat.sqrt() + eps);
            });
    }
    Ok(())
}
