//! How often positive pairs hit the clamp ceiling as the margin grows, and
//! what a saturated pair does to the gradient.

use cfflab::diagnostics::clamp_activation_rate;
use cfflab::loss::{layer_loss, similarity_matrix, LossConfig, MarginType, SimilarityContext, StabilityMode};
use cfflab::rng::{randn, substream};
use cfflab::{Graph, Result, Tensor};

fn main() -> Result<()> {
    // two tight clusters: positives are highly similar
    let mut rng = substream(3, 0);
    let labels = [0, 0, 0, 1, 1, 1];
    let noise = randn(&[6, 4], 0.15, &mut rng);
    let mut z = Tensor::zeros(&[6, 4]);
    for (i, &c) in labels.iter().enumerate() {
        for j in 0..4 {
            z.data_mut()[i * 4 + j] = if j == c { 1.0 } else { 0.0 } + noise.data()[i * 4 + j];
        }
    }
    let mut g = Graph::new();
    let zv = g.param(z);
    let zn = g.l2_normalize_rows(zv)?;
    let s = similarity_matrix(&mut g, zn)?;
    let ctx = SimilarityContext::new(&labels)?;
    println!("positive-pair similarities: {:.3?}", (0..6).flat_map(|u| ctx.positives(u).iter().map(move |&v| (u, v))).map(|(u, v)| g.value(s).data()[u * 6 + v]).collect::<Vec<_>>());
    for m in [0.0, 0.05, 0.1, 0.2, 0.4] {
        let car = clamp_activation_rate(g.value(s), &ctx, m)?;
        let cfg = LossConfig::new(0.15, m, MarginType::Clamp, StabilityMode::Detach)?;
        let loss = layer_loss(&mut g, s, &ctx, &cfg)?;
        let grads = g.backward(loss)?;
        let gz = grads.get(zv).map(|t| t.sum_squares().sqrt()).unwrap_or(0.0);
        println!("m = {m:.2}  CAR {car:.3}  loss {:.4}  |dL/dz| {gz:.4}", g.value(loss).item());
    }
    Ok(())
}
