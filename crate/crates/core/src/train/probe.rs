//! Linear probe on frozen features, selected by validation accuracy.

use serde::{Deserialize, Serialize};

use super::optim::{AdamW, AdamWConfig};
use crate::autodiff::Graph;
use crate::data::epoch_batches;
use crate::error::{Error, Result};
use crate::rng::{trunc_normal, Rng};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    /// `[N, F]`
    pub x: Tensor,
    pub y: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    /// Test accuracy (percent) at the best-validation epoch.
    pub test_accuracy: f64,
    /// Zero-based epoch with the highest validation accuracy (earliest on ties).
    pub best_epoch: usize,
    pub val_curve: Vec<f64>,
    pub test_curve: Vec<f64>,
    pub train_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct LinearProbe {
    pub w: Tensor,
    pub b: Tensor,
}

impl LinearProbe {
    pub fn init(features: usize, classes: usize, rng: &mut Rng) -> Self {
        LinearProbe { w: trunc_normal(&[features, classes], 0.02, rng), b: Tensor::zeros(&[classes]) }
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let (xv, w, b) = (g.constant(x.clone()), g.constant(self.w.clone()), g.constant(self.b.clone()));
        let z = g.matmul(xv, w)?;
        let z = g.add_broadcast(z, b)?;
        Ok(g.value(z).clone())
    }

    /// Percentage of rows whose arg-max logit equals the label.
    pub fn accuracy(&self, f: &Features) -> Result<f64> {
        let logits = self.logits(&f.x)?;
        let hits = f
            .y
            .iter()
            .enumerate()
            .filter(|&(i, &y)| crate::autodiff::kernels::argmax(logits.row(i), None) == y)
            .count();
        Ok(100.0 * hits as f64 / f.y.len() as f64)
    }

    /// Mean softmax cross-entropy over a minibatch, plus gradients.
    fn loss_and_grads(&self, x: &Tensor, y: &[usize]) -> Result<(f64, Tensor, Tensor)> {
        let n = y.len();
        let k = self.b.numel();
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let w = g.param(self.w.clone());
        let b = g.param(self.b.clone());
        let z = g.matmul(xv, w)?;
        let z = g.add_broadcast(z, b)?;
        let lp = g.log_softmax_rows(z)?;
        let mut onehot = Tensor::zeros(&[n, k]);
        for (i, &c) in y.iter().enumerate() {
            onehot.data_mut()[i * k + c] = -1.0 / n as f64;
        }
        let oh = g.constant(onehot);
        let picked = g.mul(lp, oh)?;
        let loss = g.sum(picked)?;
        let grads = g.backward(loss)?;
        Ok((g.value(loss).item(), grads.get_or_zeros(w, &self.w), grads.get_or_zeros(b, &self.b)))
    }
}

fn rows(x: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let f = x.shape()[1];
    let mut data = Vec::with_capacity(idx.len() * f);
    for &i in idx {
        data.extend_from_slice(x.row(i));
    }
    Tensor::new(vec![idx.len(), f], data)
}

/// Trains a softmax linear classifier and reports the test accuracy of the
/// epoch with the best validation accuracy.
#[allow(clippy::too_many_arguments)]
pub fn train_linear_probe(
    train: &Features,
    val: &Features,
    test: &Features,
    classes: usize,
    epochs: usize,
    batch_size: usize,
    opt: AdamWConfig,
    init_rng: &mut Rng,
    shuffle_rng: &mut Rng,
) -> Result<ProbeResult> {
    if epochs == 0 {
        return Err(Error::Invalid("probe needs at least one epoch".into()));
    }
    opt.validate()?;
    let (_, f) = train.x.dims2()?;
    let mut probe = LinearProbe::init(f, classes, init_rng);
    let mut adam = AdamW::new(opt, &[probe.w.shape(), probe.b.shape()]);
    let mut val_curve = Vec::with_capacity(epochs);
    let mut test_curve = Vec::with_capacity(epochs);
    let mut best: Option<(usize, f64, f64)> = None;
    for epoch in 0..epochs {
        for idx in epoch_batches(train.y.len(), batch_size, shuffle_rng) {
            let xb = rows(&train.x, &idx)?;
            let yb: Vec<usize> = idx.iter().map(|&i| train.y[i]).collect();
            let (loss, gw, gb) = probe.loss_and_grads(&xb, &yb)?;
            if !loss.is_finite() {
                return Err(Error::Diverged("probe loss is not finite".into()));
            }
            adam.step(&mut [&mut probe.w, &mut probe.b], &[gw, gb])?;
        }
        let va = probe.accuracy(val)?;
        let te = probe.accuracy(test)?;
        val_curve.push(va);
        test_curve.push(te);
        if best.is_none_or(|(_, bv, _)| va > bv) {
            best = Some((epoch, va, te));
        }
    }
    let (best_epoch, _, test_accuracy) = best.expect("at least one epoch");
    Ok(ProbeResult { test_accuracy, best_epoch, val_curve, test_curve, train_accuracy: probe.accuracy(train)? })
}
