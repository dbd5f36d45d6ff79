//! Finite-difference verification of analytic gradients.

use ndarray::ArrayD;

use super::{Graph, TensorError, Var};

/// Central-difference step.
pub const GRAD_CHECK_H: f64 = 1e-5;

#[derive(Debug, thiserror::Error)]
pub enum GradCheckError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("numeric fault: loss is not finite")]
    NonFiniteLoss,
    #[error("no gradient reached input {index}")]
    MissingGradient { index: usize },
}

/// Compare analytic gradients of a scalar-valued computation against central
/// finite differences, perturbing every entry of every input.
///
/// `f` rebuilds the computation from leaf vars (one per input, in order) and
/// returns the scalar loss var. Returns the maximum over all entries of
/// `|analytic - numeric| / max(1, |analytic|)`. Meant to run with `f64`
/// inputs; `f32` resolution is far too coarse for `h = 1e-5`.
pub fn gradient_check(
    inputs: &[ArrayD<f64>],
    f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError>,
) -> Result<f64, GradCheckError> {
    let eval = |points: &[ArrayD<f64>]| -> Result<f64, GradCheckError> {
        let mut g = Graph::<f64>::new();
        let vars: Vec<Var> = points.iter().map(|p| g.leaf(p.clone(), true)).collect();
        let loss = f(&mut g, &vars)?;
        let v = g.scalar(loss);
        if !v.is_finite() {
            return Err(GradCheckError::NonFiniteLoss);
        }
        Ok(v)
    };

    // Analytic pass.
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|p| g.leaf(p.clone(), true)).collect();
    let loss = f(&mut g, &vars)?;
    if !g.scalar(loss).is_finite() {
        return Err(GradCheckError::NonFiniteLoss);
    }
    let grads = g.backward(loss)?;

    let mut worst = 0.0f64;
    let mut work: Vec<ArrayD<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[i])
            .ok_or(GradCheckError::MissingGradient { index: i })?
            .clone();
        for flat in 0..input.len() {
            let orig = input.as_slice().unwrap()[flat];
            work[i].as_slice_mut().unwrap()[flat] = orig + GRAD_CHECK_H;
            let plus = eval(&work)?;
            work[i].as_slice_mut().unwrap()[flat] = orig - GRAD_CHECK_H;
            let minus = eval(&work)?;
            work[i].as_slice_mut().unwrap()[flat] = orig;

            let numeric = (plus - minus) / (2.0 * GRAD_CHECK_H);
            let a = analytic.as_slice().unwrap()[flat];
            let err = (a - numeric).abs() / 1.0f64.max(a.abs());
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}
