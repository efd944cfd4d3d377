//! Applies each augmentation profile to one image and reports how far two
//! independent views drift apart.

use cfflab::data::{augment, make_synthetic_blobs, AugmentConfig};
use cfflab::rng::{stream, Stream};
use cfflab::Result;

fn main() -> Result<()> {
    let data = make_synthetic_blobs(3, 1, 32, 0.05, 0)?;
    let img = data.image(0);
    let mut rng = stream(1, Stream::Augment);
    for name in ["identity", "cifar10", "svhn", "svhn_medium", "svhn_hard", "fashion_mnist", "synthetic"] {
        let cfg = AugmentConfig::preset(name)?;
        let trials = 200;
        let mut diff = 0.0;
        let mut zeros = 0.0;
        for _ in 0..trials {
            let a = augment(img, 3, 32, &cfg, &mut rng)?;
            let b = augment(img, 3, 32, &cfg, &mut rng)?;
            diff += a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
            let zero: Vec<f64> = (0..3).map(|c| -cfg.mean[c] / cfg.std[c]).collect();
            zeros += a.chunks(1024).enumerate().map(|(c, p)| p.iter().filter(|&&v| (v - zero[c]).abs() < 1e-12).count()).sum::<usize>() as f64
                / a.len() as f64;
        }
        println!(
            "{name:<14} mean |view1 - view2| {:.4}   black-pixel fraction {:.3}",
            diff / trials as f64,
            zeros / trials as f64
        );
    }
    Ok(())
}
