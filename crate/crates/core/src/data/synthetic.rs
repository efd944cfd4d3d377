use std::f64::consts::PI;

use rand_distr::{Distribution, Normal};

use super::{ImageDataset, Split};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

/// Class template: a class colour plus a class-specific stripe pattern.
fn template(class: usize, k: usize, size: usize) -> Vec<f64> {
    let phase = class as f64 / k as f64;
    let freq = 1.0 + (class % 3) as f64;
    let angle = PI * phase;
    let (ca, sa) = (angle.cos(), angle.sin());
    let mut img = vec![0.0; 3 * size * size];
    for ch in 0..3 {
        let color = 0.5 + 0.3 * (2.0 * PI * (phase + ch as f64 / 3.0)).cos();
        for y in 0..size {
            for x in 0..size {
                let t = (ca * x as f64 + sa * y as f64) / size as f64;
                let stripe = 0.15 * (2.0 * PI * freq * t).sin();
                img[(ch * size + y) * size + x] = (color + stripe).clamp(0.0, 1.0);
            }
        }
    }
    img
}

/// `per_class` noisy copies of each of `k` RGB templates, labels in class
/// order. Noise is Gaussian with standard deviation `noise_std`, and pixels
/// are clipped to `[0, 1]`.
pub fn make_synthetic_blobs(
    k: usize,
    per_class: usize,
    image_size: usize,
    noise_std: f64,
    seed: u64,
) -> Result<ImageDataset> {
    if k < 2 || per_class == 0 || image_size == 0 {
        return Err(Error::Invalid("synthetic blobs need k >= 2, per_class >= 1 and a positive size".into()));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::Invalid(format!("noise_std must be non-negative, got {noise_std}")));
    }
    let mut rng = stream(seed, Stream::Data);
    let noise = Normal::new(0.0, noise_std).expect("valid std");
    let plane = 3 * image_size * image_size;
    let mut data = Vec::with_capacity(k * per_class * plane);
    let mut labels = Vec::with_capacity(k * per_class);
    for class in 0..k {
        let t = template(class, k, image_size);
        for _ in 0..per_class {
            data.extend(t.iter().map(|&p| {
                let e = if noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                (p + e).clamp(0.0, 1.0)
            }));
            labels.push(class);
        }
    }
    let images = Tensor::new(vec![k * per_class, 3, image_size, image_size], data)?;
    ImageDataset::new(images, labels, k, Split::Train)
}
