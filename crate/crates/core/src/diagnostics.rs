//! Saturation diagnostics: clamp activation rate, per-layer gradient norms
//! and the seed-variance ratio.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Var};
use crate::error::{Error, Result};
use crate::loss::SimilarityContext;
use crate::stats::sample_variance;
use crate::tensor::Tensor;

/// Fraction of ordered positive pairs with `s + m > 1`.
///
/// Similarities are capped at 1 first, so round-off above 1 never counts
/// as saturation at `m = 0`.
pub fn clamp_activation_rate(s: &Tensor, ctx: &SimilarityContext, m: f64) -> Result<f64> {
    let n = ctx.len();
    if s.shape() != [n, n] {
        return Err(Error::shape("clamp_activation_rate", format!("{:?} vs {n} labels", s.shape())));
    }
    let mut total = 0usize;
    let mut hit = 0usize;
    for (&pos, &sim) in ctx.mask().iter().zip(s.data()) {
        if !pos {
            continue;
        }
        if !sim.is_finite() {
            return Err(Error::NonFinite { op: "clamp_activation_rate" });
        }
        total += 1;
        if sim.clamp(-1.0, 1.0) + m > 1.0 {
            hit += 1;
        }
    }
    if total == 0 {
        return Err(Error::Degenerate("no positive pairs in the batch".into()));
    }
    Ok(hit as f64 / total as f64)
}

/// ℓ2 norm over the concatenation of several tensors.
pub fn gradient_norm<'a>(tensors: impl IntoIterator<Item = &'a Tensor>) -> f64 {
    tensors.into_iter().map(Tensor::sum_squares).sum::<f64>().sqrt()
}

/// ℓ2 norm of the gradient over every parameter of one layer.
pub fn layer_gradient_norm(grads: &Gradients, params: &[Var]) -> Result<f64> {
    let mut parts = Vec::with_capacity(params.len());
    for &v in params {
        let g = grads
            .get(v)
            .ok_or_else(|| Error::Invalid(format!("no gradient recorded for parameter node {}", v.index())))?;
        parts.push(g);
    }
    Ok(gradient_norm(parts))
}

/// `var(clamp) / var(subtract)` with `n − 1` sample variances.
pub fn variance_ratio(acc_clamp: &[f64], acc_subtract: &[f64]) -> Result<f64> {
    let num = sample_variance(acc_clamp)?;
    let den = sample_variance(acc_subtract)?;
    if den == 0.0 {
        return Err(Error::Degenerate("denominator group has zero variance".into()));
    }
    Ok(num / den)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticSnapshot {
    pub epoch: usize,
    pub per_layer_car: Vec<f64>,
    pub per_layer_grad_norm: Vec<f64>,
    pub margin_per_layer: Vec<f64>,
}

impl DiagnosticSnapshot {
    pub fn validate(&self) -> Result<()> {
        let l = self.margin_per_layer.len();
        if self.per_layer_car.len() != l || self.per_layer_grad_norm.len() != l {
            return Err(Error::Invalid("diagnostic snapshot layer counts differ".into()));
        }
        if self.per_layer_car.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Invalid("CAR outside [0, 1]".into()));
        }
        if self.per_layer_grad_norm.iter().any(|g| !(*g >= 0.0)) {
            return Err(Error::Invalid("negative or NaN gradient norm".into()));
        }
        Ok(())
    }
}

/// Per-layer running means over minibatches; each batch weighs the same.
#[derive(Clone, Debug)]
pub struct EpochDiagnostics {
    car_sum: Vec<f64>,
    grad_sum: Vec<f64>,
    batches: usize,
}

impl EpochDiagnostics {
    pub fn new(layers: usize) -> Self {
        EpochDiagnostics { car_sum: vec![0.0; layers], grad_sum: vec![0.0; layers], batches: 0 }
    }

    pub fn record(&mut self, car: &[f64], grad_norm: &[f64]) {
        assert_eq!(car.len(), self.car_sum.len());
        assert_eq!(grad_norm.len(), self.grad_sum.len());
        self.car_sum.iter_mut().zip(car).for_each(|(a, b)| *a += b);
        self.grad_sum.iter_mut().zip(grad_norm).for_each(|(a, b)| *a += b);
        self.batches += 1;
    }

    pub fn batches(&self) -> usize {
        self.batches
    }

    pub fn finish(&self, epoch: usize, margins: &[f64]) -> Option<DiagnosticSnapshot> {
        if self.batches == 0 {
            return None;
        }
        let k = self.batches as f64;
        Some(DiagnosticSnapshot {
            epoch,
            per_layer_car: self.car_sum.iter().map(|c| c / k).collect(),
            per_layer_grad_norm: self.grad_sum.iter().map(|g| g / k).collect(),
            margin_per_layer: margins.to_vec(),
        })
    }
}
