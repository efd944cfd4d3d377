//! Layer-local supervised contrastive loss with positive-pair margins.
//!
//! Rows of the view batch are indexed `u = 0..2B` with the first views
//! followed by the second views. For anchor `u` the positive set is every
//! other row with the same label. The loss is
//!
//! ```text
//! b    = s̃ / τ
//! α_u  = max_{k≠u} b_uk            (stop-gradient in detach mode)
//! g    = b − α
//! log p_uv = g_uv − log Σ_{k≠u} exp(g_uk)
//! L    = −1/|A| Σ_{u∈A} 1/|P_u| Σ_{v∈P_u} log p̃_uv
//! ```
//!
//! where `s̃` is the clamped similarity for [`MarginType::Clamp`] and
//! `log p̃ = log p − m` on positives for [`MarginType::Subtract`]. `A` holds
//! the anchors with at least one positive.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest tolerated deviation of a representation row norm from 1.
pub const UNIT_NORM_TOL: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginType {
    Clamp,
    Subtract,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StabilityMode {
    Detach,
    Direct,
}

impl fmt::Display for MarginType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MarginType::Clamp => "clamp",
            MarginType::Subtract => "subtract",
            MarginType::None => "none",
        })
    }
}

impl fmt::Display for StabilityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StabilityMode::Detach => "detach",
            StabilityMode::Direct => "direct",
        })
    }
}

impl FromStr for MarginType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clamp" => Ok(MarginType::Clamp),
            "subtract" => Ok(MarginType::Subtract),
            "none" => Ok(MarginType::None),
            _ => Err(Error::Invalid(format!("unknown margin type `{s}`"))),
        }
    }
}

impl FromStr for StabilityMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "detach" => Ok(StabilityMode::Detach),
            "direct" => Ok(StabilityMode::Direct),
            _ => Err(Error::Invalid(format!("unknown stability mode `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub tau: f64,
    pub margin: f64,
    pub margin_type: MarginType,
    pub stability_mode: StabilityMode,
}

impl LossConfig {
    pub fn new(tau: f64, margin: f64, margin_type: MarginType, stability_mode: StabilityMode) -> Result<Self> {
        let cfg = LossConfig { tau, margin, margin_type, stability_mode };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Invalid(format!("temperature must be positive, got {}", self.tau)));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::Invalid(format!("margin must be non-negative, got {}", self.margin)));
        }
        Ok(())
    }

    /// Logit-space size of a similarity-space margin, `m / τ`.
    pub fn effective_logit_shift(&self) -> f64 {
        self.margin / self.tau
    }

    pub fn with_margin(mut self, margin: f64) -> Self {
        self.margin = margin;
        self
    }
}

/// Label structure of a view batch: positive mask and positive sets.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityContext {
    labels: Vec<usize>,
    mask: Vec<bool>,
    positives: Vec<Vec<usize>>,
}

impl SimilarityContext {
    pub fn new(labels: &[usize]) -> Result<Self> {
        let n = labels.len();
        if n < 2 {
            return Err(Error::Invalid("a view batch needs at least two rows".into()));
        }
        let mut mask = vec![false; n * n];
        let mut positives = vec![Vec::new(); n];
        for u in 0..n {
            for v in 0..n {
                if u != v && labels[u] == labels[v] {
                    mask[u * n + v] = true;
                    positives[u].push(v);
                }
            }
        }
        Ok(SimilarityContext { labels: labels.to_vec(), mask, positives })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Row-major `[n, n]` positive mask; the diagonal is always false.
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_positive(&self, u: usize, v: usize) -> bool {
        self.mask[u * self.len() + v]
    }

    pub fn positives(&self, u: usize) -> &[usize] {
        &self.positives[u]
    }

    /// Anchors with a non-empty positive set.
    pub fn anchors(&self) -> Vec<usize> {
        (0..self.len()).filter(|&u| !self.positives[u].is_empty()).collect()
    }

    /// Number of ordered positive pairs.
    pub fn num_positive_pairs(&self) -> usize {
        self.positives.iter().map(Vec::len).sum()
    }
}

fn check_unit_rows(z: &Tensor) -> Result<()> {
    let (n, _) = z.dims2()?;
    for i in 0..n {
        let norm = z.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::Invalid(format!("representation row {i} has norm {norm}, expected 1")));
        }
    }
    Ok(())
}

/// `S = Z Zᵀ` for unit-norm rows of `z`.
pub fn similarity_matrix(g: &mut Graph, z: Var) -> Result<Var> {
    check_unit_rows(g.value(z))?;
    let zt = g.transpose(z)?;
    g.matmul(z, zt)
}

/// `min(s + m, 1)` on positive pairs, `s` elsewhere.
pub fn apply_clamp_margin(g: &mut Graph, s: Var, ctx: &SimilarityContext, m: f64) -> Result<Var> {
    if !(m >= 0.0) {
        return Err(Error::Invalid(format!("margin must be non-negative, got {m}")));
    }
    let shifted = g.add_scalar(s, m)?;
    let capped = g.clamp_upper(shifted, 1.0)?;
    g.where_mask(ctx.mask(), capped, s)
}

/// Intermediate nodes of one layer loss, exposed for diagnostics and tests.
#[derive(Clone, Copy, Debug)]
pub struct LossTrace {
    pub loss: Var,
    /// Modified similarities `s̃`.
    pub s_tilde: Var,
    /// Row shift `α` as used in `g` (already detached in detach mode).
    pub alpha: Var,
    /// Shifted logits `g = b − α`.
    pub logits: Var,
    pub log_prob: Var,
}

/// Per-entry weights `1 / (|A|·|P_u|)` on positives, zero elsewhere.
fn reduction_weights(ctx: &SimilarityContext) -> Result<Tensor> {
    let n = ctx.len();
    let anchors = ctx.anchors();
    if anchors.is_empty() {
        return Err(Error::Degenerate("no anchor in the batch has a positive".into()));
    }
    let mut w = Tensor::zeros(&[n, n]);
    for &u in &anchors {
        let scale = 1.0 / (anchors.len() as f64 * ctx.positives(u).len() as f64);
        for &v in ctx.positives(u) {
            w.data_mut()[u * n + v] = scale;
        }
    }
    Ok(w)
}

/// Builds the layer loss on a `[2B, 2B]` similarity node.
pub fn layer_loss_traced(g: &mut Graph, s: Var, ctx: &SimilarityContext, cfg: &LossConfig) -> Result<LossTrace> {
    cfg.validate()?;
    let n = ctx.len();
    if g.value(s).shape() != [n, n] {
        return Err(Error::shape("layer_loss", format!("similarities {:?} vs {n} labels", g.value(s).shape())));
    }
    let weights = reduction_weights(ctx)?;

    let s_tilde = match cfg.margin_type {
        MarginType::Clamp => apply_clamp_margin(g, s, ctx, cfg.margin)?,
        MarginType::Subtract | MarginType::None => s,
    };
    let b = g.scale(s_tilde, 1.0 / cfg.tau)?;
    let alpha = g.row_max_excluding_self(b)?;
    let alpha = match cfg.stability_mode {
        StabilityMode::Detach => g.stop_gradient(alpha),
        StabilityMode::Direct => alpha,
    };
    let logits = g.sub_rowwise(b, alpha)?;
    let lse = g.row_logsumexp_excluding_self(logits)?;
    let mut log_prob = g.sub_rowwise(logits, lse)?;
    if cfg.margin_type == MarginType::Subtract {
        let shift = Tensor::new(
            vec![n, n],
            ctx.mask().iter().map(|&p| if p { cfg.margin } else { 0.0 }).collect(),
        )?;
        let shift = g.constant(shift);
        log_prob = g.sub(log_prob, shift)?;
    }
    let w = g.constant(weights);
    let weighted = g.mul(log_prob, w)?;
    let total = g.sum(weighted)?;
    let loss = g.scale(total, -1.0)?;
    if !g.value(loss).item().is_finite() {
        return Err(Error::NonFinite { op: "layer_loss" });
    }
    Ok(LossTrace { loss, s_tilde, alpha, logits, log_prob })
}

pub fn layer_loss(g: &mut Graph, s: Var, ctx: &SimilarityContext, cfg: &LossConfig) -> Result<Var> {
    Ok(layer_loss_traced(g, s, ctx, cfg)?.loss)
}

/// Loss on a representation tensor, without keeping the graph.
pub fn layer_loss_value(z: &Tensor, labels: &[usize], cfg: &LossConfig) -> Result<f64> {
    let ctx = SimilarityContext::new(labels)?;
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let s = similarity_matrix(&mut g, zv)?;
    let loss = layer_loss(&mut g, s, &ctx, cfg)?;
    Ok(g.value(loss).item())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NeutralityReport {
    /// `loss_subtract(m) − loss_none`.
    pub forward_shift: f64,
    /// Largest absolute difference over every parameter gradient entry.
    pub max_grad_diff: f64,
}

/// Compares the subtract-margin loss against the unmargined loss, with
/// gradients taken w.r.t. `params` through `build`, which maps the params
/// to unit-norm representations `[2B, d]`.
pub fn subtract_neutrality_check_with<F>(
    params: &[Tensor],
    build: F,
    labels: &[usize],
    tau: f64,
    m: f64,
    mode: StabilityMode,
) -> Result<NeutralityReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let ctx = SimilarityContext::new(labels)?;
    let run = |margin_type| -> Result<(f64, Vec<Tensor>)> {
        let cfg = LossConfig::new(tau, m, margin_type, mode)?;
        let mut g = Graph::new();
        let vars: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
        let z = build(&mut g, &vars)?;
        let s = similarity_matrix(&mut g, z)?;
        let loss = layer_loss(&mut g, s, &ctx, &cfg)?;
        let grads = g.backward(loss)?;
        let gs = vars.iter().zip(params).map(|(&v, t)| grads.get_or_zeros(v, t)).collect();
        Ok((g.value(loss).item(), gs))
    };
    let (sub, g_sub) = run(MarginType::Subtract)?;
    let (none, g_none) = run(MarginType::None)?;
    let max_grad_diff = g_sub.iter().zip(&g_none).map(|(a, b)| a.max_abs_diff(b)).fold(0.0, f64::max);
    Ok(NeutralityReport { forward_shift: sub - none, max_grad_diff })
}

/// [`subtract_neutrality_check_with`] with gradients taken directly w.r.t. `z`.
pub fn subtract_neutrality_check(z: &Tensor, labels: &[usize], tau: f64, m: f64) -> Result<NeutralityReport> {
    subtract_neutrality_check_with(std::slice::from_ref(z), |_, v| Ok(v[0]), labels, tau, m, StabilityMode::Detach)
}
