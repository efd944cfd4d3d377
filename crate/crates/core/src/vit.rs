//! Tiny pre-norm Vision Transformer with per-layer contrastive read-outs.
//!
//! Each block's output is mean-pooled over tokens and ℓ2-normalised into the
//! representation its own contrastive loss sees. Blocks receive a
//! stop-gradient copy of the previous block's output, so the loss of layer ℓ
//! never reaches the parameters of earlier layers.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::{trunc_normal, Rng};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub mlp_ratio: f64,
}

impl Default for EncoderConfig {
    /// Desk-scale encoder: 8×8 RGB images, 4 tokens, d=16, two layers.
    fn default() -> Self {
        EncoderConfig {
            image_size: 8,
            patch_size: 4,
            channels: 3,
            embed_dim: 16,
            num_heads: 2,
            num_layers: 2,
            mlp_ratio: 4.0,
        }
    }
}

impl EncoderConfig {
    /// 32×32 inputs, 4×4 patches (64 tokens), d=128, 4 heads, 8 layers.
    pub fn full_scale() -> Self {
        EncoderConfig {
            image_size: 32,
            patch_size: 4,
            channels: 3,
            embed_dim: 128,
            num_heads: 4,
            num_layers: 8,
            mlp_ratio: 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Invalid(format!("encoder config: {what}")));
        if self.image_size == 0 || self.patch_size == 0 || self.channels == 0 {
            return bad("image_size, patch_size and channels must be positive");
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return bad("image_size must be divisible by patch_size");
        }
        if self.embed_dim == 0 || self.num_heads == 0 || self.num_layers == 0 {
            return bad("embed_dim, num_heads and num_layers must be positive");
        }
        if !self.embed_dim.is_multiple_of(self.num_heads) {
            return bad("embed_dim must be divisible by num_heads");
        }
        if !(self.mlp_ratio > 0.0) || self.mlp_hidden() == 0 {
            return bad("mlp_ratio must give a positive hidden width");
        }
        Ok(())
    }

    pub fn num_tokens(&self) -> usize {
        (self.image_size / self.patch_size).pow(2)
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.mlp_ratio * self.embed_dim as f64).round() as usize
    }

    pub fn patch_features(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }
}

/// Patch projection and learned positional embeddings (owned by layer 0).
#[derive(Clone, Debug, PartialEq)]
pub struct EmbedParams {
    pub patch_w: Tensor,
    pub patch_b: Tensor,
    pub pos: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

macro_rules! named_fields {
    ($ty:ty { $($f:ident),* $(,)? }) => {
        impl $ty {
            pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
                vec![$((stringify!($f), &self.$f)),*]
            }

            pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
                vec![$((stringify!($f), &mut self.$f)),*]
            }
        }
    };
}

named_fields!(EmbedParams { patch_w, patch_b, pos });
named_fields!(LayerParams {
    ln1_gain, ln1_bias, wq, bq, wk, bk, wv, bv, wo, bo, ln2_gain, ln2_bias, w1, b1, w2, b2
});

impl LayerParams {
    fn init(cfg: &EncoderConfig, rng: &mut Rng) -> Self {
        let d = cfg.embed_dim;
        let hidden = cfg.mlp_hidden();
        LayerParams {
            ln1_gain: Tensor::full(&[d], 1.0),
            ln1_bias: Tensor::zeros(&[d]),
            wq: trunc_normal(&[d, d], INIT_STD, rng),
            bq: Tensor::zeros(&[d]),
            wk: trunc_normal(&[d, d], INIT_STD, rng),
            bk: Tensor::zeros(&[d]),
            wv: trunc_normal(&[d, d], INIT_STD, rng),
            bv: Tensor::zeros(&[d]),
            wo: trunc_normal(&[d, d], INIT_STD, rng),
            bo: Tensor::zeros(&[d]),
            ln2_gain: Tensor::full(&[d], 1.0),
            ln2_bias: Tensor::zeros(&[d]),
            w1: trunc_normal(&[d, hidden], INIT_STD, rng),
            b1: Tensor::zeros(&[hidden]),
            w2: trunc_normal(&[hidden, d], INIT_STD, rng),
            b2: Tensor::zeros(&[d]),
        }
    }
}

/// Trainable parameter set Θ_ℓ of one layer. Layer 0 also owns the embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGroup {
    pub embed: Option<EmbedParams>,
    pub block: LayerParams,
}

impl LayerGroup {
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        if let Some(e) = &self.embed {
            out.extend(e.named().into_iter().map(|(n, t)| (format!("embed.{n}"), t)));
        }
        out.extend(self.block.named().into_iter().map(|(n, t)| (n.to_string(), t)));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        if let Some(e) = &mut self.embed {
            out.extend(e.named_mut().into_iter().map(|(_, t)| t));
        }
        out.extend(self.block.named_mut().into_iter().map(|(_, t)| t));
        out
    }

    pub fn num_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub layers: Vec<LayerGroup>,
}

/// Graph handles for one bound layer group.
#[derive(Clone, Debug)]
pub struct EmbedVars {
    pub patch_w: Var,
    pub patch_b: Var,
    pub pos: Var,
}

#[derive(Clone, Debug)]
pub struct BlockVars {
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

#[derive(Clone, Debug)]
pub struct BoundLayer {
    pub embed: Option<EmbedVars>,
    pub block: BlockVars,
}

impl BoundLayer {
    /// Handles in the same order as [`LayerGroup::named`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        if let Some(e) = &self.embed {
            out.extend([e.patch_w, e.patch_b, e.pos]);
        }
        let b = &self.block;
        out.extend([
            b.ln1_gain, b.ln1_bias, b.wq, b.bq, b.wk, b.bk, b.wv, b.bv, b.wo, b.bo, b.ln2_gain,
            b.ln2_bias, b.w1, b.b1, b.w2, b.b2,
        ]);
        out
    }
}

#[derive(Clone, Debug)]
pub struct BoundEncoder {
    pub config: EncoderConfig,
    pub layers: Vec<BoundLayer>,
}

/// Whether consecutive blocks are separated by a stop-gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Locality {
    /// Layer-local training: each block sees a detached copy of its input.
    Blocked,
    /// End-to-end graph, used only to compare forward values.
    Connected,
}

#[derive(Clone, Copy, Debug)]
pub struct LayerOutput {
    /// `[N, T, d]` token outputs.
    pub tokens: Var,
    /// `[N, d]` unit-norm pooled representation.
    pub z: Var,
}

impl Encoder {
    pub fn init(config: EncoderConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (d, t) = (config.embed_dim, config.num_tokens());
        let embed = EmbedParams {
            patch_w: trunc_normal(&[config.patch_features(), d], INIT_STD, rng),
            patch_b: Tensor::zeros(&[d]),
            pos: trunc_normal(&[t, d], INIT_STD, rng),
        };
        let mut layers = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            layers.push(LayerGroup {
                embed: (l == 0).then(|| embed.clone()),
                block: LayerParams::init(&config, rng),
            });
        }
        Ok(Encoder { config, layers })
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(LayerGroup::num_params).sum()
    }

    /// Order-sensitive checksum over every parameter.
    pub fn checksum(&self) -> u64 {
        self.layers
            .iter()
            .flat_map(|l| l.named().into_iter().map(|(_, t)| t.checksum()))
            .fold(0u64, |h, c| h.rotate_left(5) ^ c)
    }

    /// Registers the parameters in `g`; `trainable = false` binds constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundEncoder {
        let vars: Vec<Var> = self
            .layers
            .iter()
            .flat_map(|l| l.named())
            .map(|(_, t)| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        self.bind_vars(&vars).expect("one handle per parameter")
    }

    /// Builds the bound view from caller-made handles, one per parameter in
    /// [`LayerGroup::named`] order, layer after layer.
    pub fn bind_vars(&self, vars: &[Var]) -> Result<BoundEncoder> {
        let total: usize = self.layers.iter().map(|l| l.named().len()).sum();
        if vars.len() != total {
            return Err(Error::Invalid(format!("encoder has {total} parameter tensors, got {} handles", vars.len())));
        }
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("length checked");
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let embed = l.embed.as_ref().map(|_| EmbedVars { patch_w: next(), patch_b: next(), pos: next() });
                let block = BlockVars {
                    ln1_gain: next(),
                    ln1_bias: next(),
                    wq: next(),
                    bq: next(),
                    wk: next(),
                    bk: next(),
                    wv: next(),
                    bv: next(),
                    wo: next(),
                    bo: next(),
                    ln2_gain: next(),
                    ln2_bias: next(),
                    w1: next(),
                    b1: next(),
                    w2: next(),
                    b2: next(),
                };
                BoundLayer { embed, block }
            })
            .collect();
        Ok(BoundEncoder { config: self.config.clone(), layers })
    }

    /// Final-layer (or all-layer concatenated) representations without
    /// recording gradients.
    pub fn features(&self, images: &Tensor, all_layers: bool) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let outs = forward_all_layers(&mut g, &bound, images, Locality::Blocked)?;
        if !all_layers {
            return Ok(g.value(outs.last().expect("at least one layer").z).clone());
        }
        let n = images.shape()[0];
        let d = self.config.embed_dim;
        let l = outs.len();
        let mut data = vec![0.0; n * d * l];
        for (li, o) in outs.iter().enumerate() {
            let z = g.value(o.z);
            for i in 0..n {
                data[i * d * l + li * d..i * d * l + (li + 1) * d].copy_from_slice(z.row(i));
            }
        }
        Tensor::new(vec![n, d * l], data)
    }
}

/// Splits `[N, C, S, S]` images into `[N·T, C·p·p]` patch rows.
///
/// Patches are ordered row-major over the patch grid; features within a
/// patch are ordered (channel, row, column).
pub fn extract_patches(images: &Tensor, cfg: &EncoderConfig) -> Result<Tensor> {
    let (s, p, c) = (cfg.image_size, cfg.patch_size, cfg.channels);
    let &[n, ci, h, w] = images.shape() else {
        return Err(Error::shape("patch_embed", format!("expected [N,C,S,S], got {:?}", images.shape())));
    };
    if ci != c || h != s || w != s {
        return Err(Error::shape("patch_embed", format!("expected [N,{c},{s},{s}], got {:?}", images.shape())));
    }
    let grid = s / p;
    let mut data = Vec::with_capacity(images.numel());
    let src = images.data();
    for i in 0..n {
        for py in 0..grid {
            for px in 0..grid {
                for ch in 0..c {
                    for y in 0..p {
                        let row = ((i * c + ch) * s + py * p + y) * s + px * p;
                        data.extend_from_slice(&src[row..row + p]);
                    }
                }
            }
        }
    }
    Tensor::new(vec![n * grid * grid, cfg.patch_features()], data)
}

/// Linear patch projection plus positional embedding, `[N, T, d]`.
pub fn patch_embed(g: &mut Graph, images: &Tensor, embed: &EmbedVars, cfg: &EncoderConfig) -> Result<Var> {
    let patches = extract_patches(images, cfg)?;
    let n = images.shape()[0];
    let x = g.constant(patches);
    let proj = g.matmul(x, embed.patch_w)?;
    let proj = g.add_broadcast(proj, embed.patch_b)?;
    let tokens = g.reshape(proj, &[n, cfg.num_tokens(), cfg.embed_dim])?;
    g.add_broadcast(tokens, embed.pos)
}

fn linear(g: &mut Graph, x2: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x2, w)?;
    g.add_broadcast(y, b)
}

/// `[N, T, d] → [N·H, T, d/H]`.
fn split_heads(g: &mut Graph, x2: Var, n: usize, cfg: &EncoderConfig) -> Result<Var> {
    let (t, h, dh) = (cfg.num_tokens(), cfg.num_heads, cfg.head_dim());
    let x = g.reshape(x2, &[n, t, h, dh])?;
    let x = g.permute(x, &[0, 2, 1, 3])?;
    g.reshape(x, &[n * h, t, dh])
}

/// Pre-norm block: `x + MHSA(LN(x))`, then `x + MLP(LN(x))` with GELU.
pub fn encoder_block_forward(g: &mut Graph, x: Var, p: &BlockVars, cfg: &EncoderConfig) -> Result<Var> {
    let shape = g.value(x).shape().to_vec();
    let (t, d, h, dh) = (cfg.num_tokens(), cfg.embed_dim, cfg.num_heads, cfg.head_dim());
    if shape.len() != 3 || shape[1] != t || shape[2] != d {
        return Err(Error::shape("encoder_block", format!("expected [N,{t},{d}], got {shape:?}")));
    }
    let n = shape[0];

    let a = g.layer_norm(x, p.ln1_gain, p.ln1_bias, LAYER_NORM_EPS)?;
    let a = g.reshape(a, &[n * t, d])?;
    let q = linear(g, a, p.wq, p.bq)?;
    let k = linear(g, a, p.wk, p.bk)?;
    let v = linear(g, a, p.wv, p.bv)?;
    let q = split_heads(g, q, n, cfg)?;
    let k = split_heads(g, k, n, cfg)?;
    let v = split_heads(g, v, n, cfg)?;
    let kt = g.transpose(k)?;
    let scores = g.batch_matmul(q, kt)?;
    let scores = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
    let attn = g.softmax_rows(scores)?;
    let ctx = g.batch_matmul(attn, v)?;
    let ctx = g.reshape(ctx, &[n, h, t, dh])?;
    let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = g.reshape(ctx, &[n * t, d])?;
    let o = linear(g, ctx, p.wo, p.bo)?;
    let o = g.reshape(o, &[n, t, d])?;
    let x1 = g.add(x, o)?;

    let m = g.layer_norm(x1, p.ln2_gain, p.ln2_bias, LAYER_NORM_EPS)?;
    let m = g.reshape(m, &[n * t, d])?;
    let m = linear(g, m, p.w1, p.b1)?;
    let m = g.gelu(m)?;
    let m = linear(g, m, p.w2, p.b2)?;
    let m = g.reshape(m, &[n, t, d])?;
    g.add(x1, m)
}

/// Mean over tokens followed by row ℓ2 normalisation, `[N, T, d] → [N, d]`.
pub fn pooled_representation(g: &mut Graph, tokens: Var) -> Result<Var> {
    if g.value(tokens).rank() != 3 {
        return Err(Error::shape("pooled_representation", "expected [N,T,d]"));
    }
    let mean = g.mean_over_axis(tokens, 1)?;
    g.l2_normalize_rows(mean)
}

/// Runs every block and returns each layer's tokens and representation.
pub fn forward_all_layers(
    g: &mut Graph,
    enc: &BoundEncoder,
    images: &Tensor,
    locality: Locality,
) -> Result<Vec<LayerOutput>> {
    let embed = enc.layers[0].embed.as_ref().expect("layer 0 owns the embedding");
    let mut x = patch_embed(g, images, embed, &enc.config)?;
    let mut outs = Vec::with_capacity(enc.layers.len());
    for (l, layer) in enc.layers.iter().enumerate() {
        let input = if l > 0 && locality == Locality::Blocked { g.stop_gradient(x) } else { x };
        let tokens = encoder_block_forward(g, input, &layer.block, &enc.config)?;
        let z = pooled_representation(g, tokens)?;
        outs.push(LayerOutput { tokens, z });
        x = tokens;
    }
    Ok(outs)
}

pub const CHECKPOINT_MAGIC: &str = "CFFLAB-ENCODER-CKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    magic: String,
    version: u32,
    config: EncoderConfig,
    tensors: Vec<CheckpointTensor>,
}

impl Encoder {
    /// Writes a JSON checkpoint (`magic`, `version`, `config`, named tensors).
    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors = self
            .layers
            .iter()
            .enumerate()
            .flat_map(|(l, group)| {
                group.named().into_iter().map(move |(n, t)| CheckpointTensor {
                    name: format!("layers.{l}.{n}"),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
            })
            .collect();
        let ckpt = Checkpoint {
            magic: CHECKPOINT_MAGIC.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&ckpt)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_slice(&bytes)?;
        if ckpt.magic != CHECKPOINT_MAGIC || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Invalid(format!(
                "not a v{CHECKPOINT_VERSION} encoder checkpoint: {} v{}",
                ckpt.magic, ckpt.version
            )));
        }
        // Shapes come from a fresh init; values are overwritten by name.
        let mut rng = crate::rng::substream(0, 0);
        let mut enc = Encoder::init(ckpt.config, &mut rng)?;
        let mut by_name: std::collections::HashMap<String, CheckpointTensor> =
            ckpt.tensors.into_iter().map(|t| (t.name.clone(), t)).collect();
        for (l, group) in enc.layers.iter_mut().enumerate() {
            let names: Vec<String> = group.named().into_iter().map(|(n, _)| n).collect();
            for (name, slot) in names.into_iter().zip(group.tensors_mut()) {
                let key = format!("layers.{l}.{name}");
                let t = by_name
                    .remove(&key)
                    .ok_or_else(|| Error::Invalid(format!("checkpoint is missing `{key}`")))?;
                if t.shape != slot.shape() {
                    return Err(Error::shape("checkpoint", format!("`{key}` has shape {:?}", t.shape)));
                }
                *slot = Tensor::new(t.shape, t.data)?;
            }
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Invalid(format!("unexpected tensor `{extra}` in checkpoint")));
        }
        Ok(enc)
    }
}
