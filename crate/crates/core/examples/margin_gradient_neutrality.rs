//! Subtracting a constant from positive-pair log-probabilities shifts the
//! loss by exactly that constant and leaves every gradient unchanged.

use cfflab::loss::{subtract_neutrality_check, layer_loss_value, LossConfig, MarginType, StabilityMode};
use cfflab::rng::{randn, substream};
use cfflab::Result;

fn unit_rows(n: usize, d: usize, seed: u64) -> cfflab::Tensor {
    let mut z = randn(&[n, d], 1.0, &mut substream(seed, 0));
    for i in 0..n {
        let norm = z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        let row = &mut z.data_mut()[i * d..(i + 1) * d];
        row.iter_mut().for_each(|v| *v /= norm);
    }
    z
}

fn main() -> Result<()> {
    let labels = [0, 1, 2, 0, 1, 2, 0, 1];
    println!("{:>5} {:>5} {:>16} {:>16}", "tau", "m", "loss shift", "max grad diff");
    for (seed, tau, m) in [(1, 0.15, 0.4), (2, 0.5, 0.2), (3, 0.1, 0.4), (4, 0.15, 0.0)] {
        let z = unit_rows(labels.len(), 8, seed);
        let r = subtract_neutrality_check(&z, &labels, tau, m)?;
        println!("{tau:>5} {m:>5} {:>16.3e} {:>16.3e}", r.forward_shift - m, r.max_grad_diff);
    }

    // the clamp margin, by contrast, changes the loss non-uniformly
    let z = unit_rows(labels.len(), 8, 9);
    for m in [0.0, 0.2, 0.4, 0.8] {
        let clamp = layer_loss_value(&z, &labels, &LossConfig::new(0.15, m, MarginType::Clamp, StabilityMode::Detach)?)?;
        let sub = layer_loss_value(&z, &labels, &LossConfig::new(0.15, m, MarginType::Subtract, StabilityMode::Detach)?)?;
        println!("m = {m:.1}: clamp loss {clamp:.6}, subtract loss {sub:.6}");
    }
    Ok(())
}
