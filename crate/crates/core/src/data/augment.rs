//! Per-image augmentation on channel-planar `[C, S, S]` buffers.
//!
//! Order: pad-and-crop, horizontal flip, rotation, brightness, contrast,
//! erasing, normalisation. Every draw comes from the caller's RNG.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    /// Zero padding added on every side before the random crop.
    pub crop_padding: usize,
    pub hflip_prob: f64,
    /// Rotation angle drawn uniformly from `±rotation_degrees`.
    pub rotation_degrees: f64,
    /// Brightness factor drawn from `[1 − s, 1 + s]`.
    pub brightness: f64,
    /// Contrast factor drawn from `[1 − s, 1 + s]`.
    pub contrast: f64,
    pub erase_prob: f64,
    /// Erased area as a fraction of the image, drawn from this range.
    pub erase_scale: (f64, f64),
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl AugmentConfig {
    /// No augmentation; normalisation with `μ = σ = 0.5`.
    pub fn identity(channels: usize) -> Self {
        AugmentConfig {
            crop_padding: 0,
            hflip_prob: 0.0,
            rotation_degrees: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            erase_prob: 0.0,
            erase_scale: (0.0, 0.0),
            mean: vec![0.5; channels],
            std: vec![0.5; channels],
        }
    }

    pub fn cifar() -> Self {
        AugmentConfig {
            crop_padding: 12,
            hflip_prob: 0.5,
            mean: vec![0.491, 0.482, 0.447],
            std: vec![0.202, 0.199, 0.201],
            ..Self::identity(3)
        }
    }

    pub fn svhn_easy() -> Self {
        AugmentConfig {
            crop_padding: 12,
            hflip_prob: 0.5,
            mean: vec![0.438, 0.444, 0.473],
            std: vec![0.198, 0.201, 0.197],
            ..Self::identity(3)
        }
    }

    /// Saturation and hue jitter are not implemented.
    pub fn svhn_medium() -> Self {
        AugmentConfig {
            crop_padding: 4,
            hflip_prob: 0.0,
            rotation_degrees: 10.0,
            brightness: 0.2,
            contrast: 0.2,
            ..Self::svhn_easy()
        }
    }

    /// Saturation and hue jitter are not implemented.
    pub fn svhn_hard() -> Self {
        AugmentConfig {
            crop_padding: 6,
            hflip_prob: 0.5,
            rotation_degrees: 15.0,
            brightness: 0.4,
            contrast: 0.4,
            erase_prob: 0.5,
            erase_scale: (0.1, 0.3),
            ..Self::svhn_easy()
        }
    }

    pub fn fashion_mnist() -> Self {
        AugmentConfig { crop_padding: 4, hflip_prob: 0.5, ..Self::identity(3) }
    }

    /// Mild recipe for 8×8 and 16×16 synthetic images.
    pub fn synthetic() -> Self {
        AugmentConfig { crop_padding: 1, hflip_prob: 0.5, ..Self::identity(3) }
    }

    /// Looks up a named profile.
    pub fn preset(name: &str) -> Result<Self> {
        Ok(match name {
            "cifar10" | "cifar100" | "cifar" => Self::cifar(),
            "svhn" | "svhn_easy" => Self::svhn_easy(),
            "svhn_medium" => Self::svhn_medium(),
            "svhn_hard" => Self::svhn_hard(),
            "fashion_mnist" => Self::fashion_mnist(),
            "synthetic" => Self::synthetic(),
            "identity" => Self::identity(3),
            _ => return Err(Error::Invalid(format!("unknown augmentation profile `{name}`"))),
        })
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.hflip_prob) || !prob(self.erase_prob) {
            return Err(Error::Invalid("augmentation probabilities must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.brightness) || !(0.0..=1.0).contains(&self.contrast) {
            return Err(Error::Invalid("jitter strengths must lie in [0, 1]".into()));
        }
        if !(self.rotation_degrees >= 0.0 && self.rotation_degrees <= 180.0) {
            return Err(Error::Invalid("rotation_degrees must lie in [0, 180]".into()));
        }
        let (lo, hi) = self.erase_scale;
        if self.erase_prob > 0.0 && !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Invalid("erase_scale must satisfy 0 < lo <= hi <= 1".into()));
        }
        if self.mean.len() != channels || self.std.len() != channels {
            return Err(Error::Invalid(format!("normalisation needs {channels} channel constants")));
        }
        if self.std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Invalid("normalisation std must be positive".into()));
        }
        Ok(())
    }
}

/// Zero-pads by `pad` and returns the `s×s` window at `(dy, dx)` of the
/// padded image, so `out[y][x] = padded[y + dy][x + dx]`.
pub fn pad_crop(img: &[f64], c: usize, s: usize, pad: usize, dy: usize, dx: usize) -> Vec<f64> {
    assert!(dy <= 2 * pad && dx <= 2 * pad);
    let mut out = vec![0.0; img.len()];
    for ch in 0..c {
        for y in 0..s {
            let sy = (y + dy) as isize - pad as isize;
            if sy < 0 || sy >= s as isize {
                continue;
            }
            for x in 0..s {
                let sx = (x + dx) as isize - pad as isize;
                if sx >= 0 && sx < s as isize {
                    out[(ch * s + y) * s + x] = img[(ch * s + sy as usize) * s + sx as usize];
                }
            }
        }
    }
    out
}

pub fn hflip(img: &mut [f64], c: usize, s: usize) {
    for row in img.chunks_mut(s).take(c * s) {
        row.reverse();
    }
}

/// Rotation about the image centre with nearest-neighbour sampling and
/// zero fill.
pub fn rotate_nearest(img: &[f64], c: usize, s: usize, degrees: f64) -> Vec<f64> {
    let (sin, cos) = degrees.to_radians().sin_cos();
    let mid = (s as f64 - 1.0) / 2.0;
    let mut out = vec![0.0; img.len()];
    for y in 0..s {
        for x in 0..s {
            let (ox, oy) = (x as f64 - mid, y as f64 - mid);
            // inverse map: where does output (x, y) come from
            let sx = (cos * ox + sin * oy + mid).round();
            let sy = (-sin * ox + cos * oy + mid).round();
            if sx < 0.0 || sy < 0.0 || sx >= s as f64 || sy >= s as f64 {
                continue;
            }
            let (sx, sy) = (sx as usize, sy as usize);
            for ch in 0..c {
                out[(ch * s + y) * s + x] = img[(ch * s + sy) * s + sx];
            }
        }
    }
    out
}

pub fn adjust_brightness(img: &mut [f64], factor: f64) {
    img.iter_mut().for_each(|p| *p = (*p * factor).clamp(0.0, 1.0));
}

/// Scales deviations from the image mean by `factor`.
pub fn adjust_contrast(img: &mut [f64], factor: f64) {
    let m = img.iter().sum::<f64>() / img.len() as f64;
    img.iter_mut().for_each(|p| *p = ((*p - m) * factor + m).clamp(0.0, 1.0));
}

/// Zeroes the rectangle `[y0, y0 + h) × [x0, x0 + w)` in every channel.
pub fn erase(img: &mut [f64], c: usize, s: usize, y0: usize, x0: usize, h: usize, w: usize) {
    for ch in 0..c {
        for y in y0..(y0 + h).min(s) {
            for x in x0..(x0 + w).min(s) {
                img[(ch * s + y) * s + x] = 0.0;
            }
        }
    }
}

pub fn normalize(img: &mut [f64], c: usize, mean: &[f64], std: &[f64]) -> Result<()> {
    if mean.len() != c || std.len() != c {
        return Err(Error::Invalid(format!("normalisation needs {c} channel constants")));
    }
    let plane = img.len() / c;
    for (ch, chunk) in img.chunks_mut(plane).enumerate() {
        chunk.iter_mut().for_each(|p| *p = (*p - mean[ch]) / std[ch]);
    }
    Ok(())
}

fn factor(strength: f64, rng: &mut Rng) -> f64 {
    if strength > 0.0 {
        rng.random_range(1.0 - strength..=1.0 + strength)
    } else {
        1.0
    }
}

/// Draws an erase rectangle of relative area in `scale` and log-uniform
/// aspect ratio in `[0.3, 3.3]`; gives up after ten misses.
fn erase_box(s: usize, scale: (f64, f64), rng: &mut Rng) -> Option<(usize, usize, usize, usize)> {
    let area = (s * s) as f64;
    for _ in 0..10 {
        let target = area * rng.random_range(scale.0..=scale.1);
        let log_r = rng.random_range((0.3f64).ln()..=(3.3f64).ln());
        let r = log_r.exp();
        let h = (target * r).sqrt().round() as usize;
        let w = (target / r).sqrt().round() as usize;
        if h >= 1 && w >= 1 && h <= s && w <= s {
            let y0 = rng.random_range(0..=s - h);
            let x0 = rng.random_range(0..=s - w);
            return Some((y0, x0, h, w));
        }
    }
    None
}

/// Full augmentation pipeline for one `[C, S, S]` image in `[0, 1]`.
pub fn augment(img: &[f64], c: usize, s: usize, cfg: &AugmentConfig, rng: &mut Rng) -> Result<Vec<f64>> {
    if img.len() != c * s * s {
        return Err(Error::shape("augment", format!("{} values for [{c},{s},{s}]", img.len())));
    }
    let mut out = if cfg.crop_padding > 0 {
        let p = cfg.crop_padding;
        let dy = rng.random_range(0..=2 * p);
        let dx = rng.random_range(0..=2 * p);
        pad_crop(img, c, s, p, dy, dx)
    } else {
        img.to_vec()
    };
    if cfg.hflip_prob > 0.0 && rng.random_bool(cfg.hflip_prob) {
        hflip(&mut out, c, s);
    }
    if cfg.rotation_degrees > 0.0 {
        let deg = rng.random_range(-cfg.rotation_degrees..=cfg.rotation_degrees);
        out = rotate_nearest(&out, c, s, deg);
    }
    if cfg.brightness > 0.0 {
        adjust_brightness(&mut out, factor(cfg.brightness, rng));
    }
    if cfg.contrast > 0.0 {
        adjust_contrast(&mut out, factor(cfg.contrast, rng));
    }
    if cfg.erase_prob > 0.0 && rng.random_bool(cfg.erase_prob) {
        if let Some((y0, x0, h, w)) = erase_box(s, cfg.erase_scale, rng) {
            erase(&mut out, c, s, y0, x0, h, w);
        }
    }
    normalize(&mut out, c, &cfg.mean, &cfg.std)?;
    Ok(out)
}
