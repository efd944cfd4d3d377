//! Detached and direct row-max shifts give identical losses; their
//! gradients differ only through the shift's own (zero-sum) path.

use cfflab::loss::{layer_loss, similarity_matrix, LossConfig, MarginType, SimilarityContext, StabilityMode};
use cfflab::rng::{randn, substream};
use cfflab::{Graph, Result};

fn main() -> Result<()> {
    let labels = [0, 1, 0, 1, 2, 2];
    for seed in 0..4 {
        let z = randn(&[6, 5], 1.0, &mut substream(seed, 0));
        let run = |mode| -> Result<(f64, cfflab::Tensor)> {
            let mut g = Graph::new();
            let zv = g.param(z.clone());
            let zn = g.l2_normalize_rows(zv)?;
            let s = similarity_matrix(&mut g, zn)?;
            let cfg = LossConfig::new(0.15, 0.3, MarginType::Clamp, mode)?;
            let loss = layer_loss(&mut g, s, &SimilarityContext::new(&labels)?, &cfg)?;
            let grads = g.backward(loss)?;
            Ok((g.value(loss).item(), grads.get_or_zeros(zv, &z)))
        };
        let (ld, gd) = run(StabilityMode::Detach)?;
        let (lr, gr) = run(StabilityMode::Direct)?;
        println!("seed {seed}: loss {ld:.12} vs {lr:.12}, max gradient difference {:.2e}", gd.max_abs_diff(&gr));
    }
    Ok(())
}
