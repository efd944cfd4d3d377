//! Checks reverse-mode gradients against central differences, first for a
//! few primitive operators and then for each layer's contrastive loss
//! through a two-layer encoder.

use cfflab::gradcheck::{check, weighted_sum, DEFAULT_STEP};
use cfflab::loss::{layer_loss, similarity_matrix, LossConfig, MarginType, SimilarityContext, StabilityMode};
use cfflab::rng::{randn, substream};
use cfflab::vit::{forward_all_layers, Encoder, EncoderConfig, Locality};
use cfflab::{Graph, Result, Tensor, Var};

type Op = fn(&mut Graph, Var) -> Result<Var>;

fn main() -> Result<()> {
    let mut rng = substream(7, 0);
    let x = randn(&[3, 5], 1.0, &mut rng);
    let w = randn(&[3, 5], 1.0, &mut rng);
    let ops: [(&str, Op); 5] = [
        ("gelu", |g, v| g.gelu(v)),
        ("exp", |g, v| g.exp(v)),
        ("softmax_rows", |g, v| g.softmax_rows(v)),
        ("log_softmax_rows", |g, v| g.log_softmax_rows(v)),
        ("l2_normalize_rows", |g, v| g.l2_normalize_rows(v)),
    ];
    for (name, op) in ops {
        let r = check(std::slice::from_ref(&x), DEFAULT_STEP, |g, v| {
            let y = op(g, v[0])?;
            weighted_sum(g, y, &w)
        })?;
        println!("{name:<20} relative error {:.2e}", r.worst_rel_err());
    }

    // d=8, 4 tokens, 2 layers
    let cfg = EncoderConfig { embed_dim: 8, mlp_ratio: 2.0, ..EncoderConfig::default() };
    let enc = Encoder::init(cfg, &mut rng)?;
    let params: Vec<Tensor> =
        enc.layers.iter().flat_map(|l| l.named()).map(|(_, t)| t.map(|v| v * 10.0 + 0.01)).collect();
    let images = randn(&[6, 3, 8, 8], 0.5, &mut rng);
    let labels = [0, 1, 2, 0, 1, 2];
    let ctx = SimilarityContext::new(&labels)?;
    let loss_cfg = LossConfig::new(0.5, 0.3, MarginType::Clamp, StabilityMode::Detach)?;
    for layer in 0..2 {
        let r = check(&params, DEFAULT_STEP, |g, v| {
            let bound = enc.bind_vars(v)?;
            let outs = forward_all_layers(g, &bound, &images, Locality::Blocked)?;
            let s = similarity_matrix(g, outs[layer].z)?;
            layer_loss(g, s, &ctx, &loss_cfg)
        })?;
        let touched = r.analytic.iter().filter(|a| a.sum_squares() > 0.0).count();
        println!(
            "layer {layer} loss: {touched}/{} parameter tensors receive gradient, worst relative error {:.2e}",
            params.len(),
            r.rel_err.iter().zip(&r.analytic).filter(|(_, a)| a.sum_squares() > 1e-20).map(|(e, _)| *e).fold(0.0, f64::max)
        );
    }
    Ok(())
}
