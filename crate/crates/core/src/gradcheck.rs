//! Central finite-difference oracle for reverse-mode gradients.
//!
//! The numeric side only evaluates forward values, so it stays independent
//! of every backward rule it checks.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)` per input.
    pub rel_err: Vec<f64>,
    /// Largest entry-wise absolute difference per input.
    pub max_abs_err: Vec<f64>,
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

impl GradCheck {
    pub fn worst_rel_err(&self) -> f64 {
        self.rel_err.iter().copied().fold(0.0, f64::max)
    }
}

fn eval<F>(inputs: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let v = g.value(out);
    if v.numel() != 1 {
        return Err(Error::shape("gradcheck", "function must return a single element"));
    }
    Ok(v.item())
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` against
/// central differences with step `h`.
pub fn check<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor> =
        vars.iter().zip(inputs).map(|(&v, t)| grads.get_or_zeros(v, t)).collect();

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut num = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].numel() {
            let x0 = inputs[i].data()[j];
            work[i].data_mut()[j] = x0 + h;
            let fp = eval(&work, &f)?;
            work[i].data_mut()[j] = x0 - h;
            let fm = eval(&work, &f)?;
            work[i].data_mut()[j] = x0;
            num.data_mut()[j] = (fp - fm) / (2.0 * h);
        }
        numeric.push(num);
    }

    let mut rel_err = Vec::new();
    let mut max_abs_err = Vec::new();
    for (a, n) in analytic.iter().zip(&numeric) {
        let diff: f64 = a.data().iter().zip(n.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = a.sum_squares().sqrt().max(n.sum_squares().sqrt());
        rel_err.push(if scale == 0.0 { 0.0 } else { diff / scale });
        max_abs_err.push(a.max_abs_diff(n));
    }
    Ok(GradCheck { rel_err, max_abs_err, analytic, numeric })
}

/// `Σ w ⊙ x` with constant weights, turning any tensor into a scalar probe.
pub fn weighted_sum(g: &mut Graph, x: Var, weights: &Tensor) -> Result<Var> {
    let w = g.constant(weights.clone());
    let p = g.mul(x, w)?;
    g.sum(p)
}
