//! CIFAR-10 binary format: one label byte followed by 3×1024 channel-planar
//! pixel bytes per record.

use std::path::Path;

use super::{ImageDataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const SIDE: usize = 32;
const PIXELS: usize = 3 * SIDE * SIDE;
pub const CIFAR_RECORD_BYTES: usize = 1 + PIXELS;

pub fn parse_cifar_bytes(bytes: &[u8], num_classes: usize, split: Split) -> Result<ImageDataset> {
    if bytes.is_empty() {
        return Err(Error::Malformed { offset: 0, reason: "file is empty".into() });
    }
    let rem = bytes.len() % CIFAR_RECORD_BYTES;
    if rem != 0 {
        let start = bytes.len() - rem;
        return Err(Error::Malformed {
            offset: start as u64,
            reason: format!("truncated record: {rem} of {CIFAR_RECORD_BYTES} bytes"),
        });
    }
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * PIXELS);
    for (r, rec) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        let y = rec[0] as usize;
        if y >= num_classes {
            return Err(Error::Malformed {
                offset: (r * CIFAR_RECORD_BYTES) as u64,
                reason: format!("label {y} outside 0..{num_classes}"),
            });
        }
        labels.push(y);
        data.extend(rec[1..].iter().map(|&p| f64::from(p) / 255.0));
    }
    ImageDataset::new(Tensor::new(vec![n, 3, SIDE, SIDE], data)?, labels, num_classes, split)
}

pub fn load_cifar_binary(path: &Path, num_classes: usize, split: Split) -> Result<ImageDataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_cifar_bytes(&bytes, num_classes, split)
}

/// Writes 32×32 RGB images, rounding pixels to the nearest of 256 levels.
pub fn write_cifar_binary(path: &Path, data: &ImageDataset) -> Result<()> {
    if data.images.shape()[1..] != [3, SIDE, SIDE] {
        return Err(Error::shape("write_cifar_binary", format!("expected [N,3,32,32], got {:?}", data.images.shape())));
    }
    let mut out = Vec::with_capacity(data.len() * CIFAR_RECORD_BYTES);
    for i in 0..data.len() {
        let y = u8::try_from(data.labels[i])
            .map_err(|_| Error::Invalid(format!("label {} does not fit in a byte", data.labels[i])))?;
        out.push(y);
        out.extend(data.image(i).iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
