//! Image datasets, augmentation and two-view batch construction.

mod augment;
mod cifar;
mod synthetic;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub use augment::{
    adjust_brightness, adjust_contrast, augment, erase, hflip, normalize, pad_crop, rotate_nearest, AugmentConfig,
};
pub use cifar::{load_cifar_binary, parse_cifar_bytes, write_cifar_binary, CIFAR_RECORD_BYTES};
pub use synthetic::make_synthetic_blobs;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// `[N, C, S, S]` images with values in `[0, 1]` and labels in `0..K`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageDataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl ImageDataset {
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        let &[n, _, h, w] = images.shape() else {
            return Err(Error::shape("ImageDataset", format!("expected [N,C,S,S], got {:?}", images.shape())));
        };
        if h != w {
            return Err(Error::shape("ImageDataset", "images must be square"));
        }
        if n == 0 || labels.len() != n {
            return Err(Error::Invalid(format!("{} labels for {n} images", labels.len())));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Invalid(format!("label {y} outside 0..{num_classes}")));
        }
        Ok(ImageDataset { images, labels, num_classes, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.images.shape()[1]
    }

    pub fn image_size(&self) -> usize {
        self.images.shape()[2]
    }

    fn image_len(&self) -> usize {
        self.channels() * self.image_size() * self.image_size()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let k = self.image_len();
        &self.images.data()[i * k..(i + 1) * k]
    }

    /// New dataset holding `indices` in the given order.
    pub fn subset(&self, indices: &[usize], split: Split) -> Result<Self> {
        let k = self.image_len();
        let mut data = Vec::with_capacity(indices.len() * k);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        ImageDataset::new(Tensor::new(shape, data)?, labels, self.num_classes, split)
    }

    /// Holds out the first `n_val` images of a shuffled order drawn from `rng`.
    pub fn split_validation(&self, n_val: usize, rng: &mut Rng) -> Result<(Self, Self)> {
        if n_val == 0 || n_val >= self.len() {
            return Err(Error::Invalid(format!("cannot hold out {n_val} of {} images", self.len())));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(rng);
        let val = self.subset(&order[..n_val], Split::Val)?;
        let train = self.subset(&order[n_val..], Split::Train)?;
        Ok((train, val))
    }

    /// Images with the per-channel normalisation of `cfg` and nothing else.
    pub fn normalized_images(&self, cfg: &AugmentConfig) -> Result<Tensor> {
        let mut out = self.images.clone();
        let k = self.image_len();
        for img in out.data_mut().chunks_mut(k) {
            normalize(img, self.channels(), &cfg.mean, &cfg.std)?;
        }
        Ok(out)
    }
}

/// `2B` augmented views: rows `0..B` are first views, `B..2B` second views.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewBatch {
    pub views: Tensor,
    pub labels: Vec<usize>,
}

impl ViewBatch {
    pub fn batch_size(&self) -> usize {
        self.labels.len() / 2
    }
}

/// Two independent augmentations of each indexed image.
pub fn make_two_view_batch(
    data: &ImageDataset,
    indices: &[usize],
    cfg: &AugmentConfig,
    rng: &mut Rng,
) -> Result<ViewBatch> {
    if indices.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let (c, s) = (data.channels(), data.image_size());
    let k = c * s * s;
    let b = indices.len();
    let mut views = vec![0.0; 2 * b * k];
    for (r, &i) in indices.iter().enumerate() {
        let first = augment(data.image(i), c, s, cfg, rng)?;
        let second = augment(data.image(i), c, s, cfg, rng)?;
        views[r * k..(r + 1) * k].copy_from_slice(&first);
        views[(b + r) * k..(b + r + 1) * k].copy_from_slice(&second);
    }
    let labels = indices.iter().chain(indices).map(|&i| data.labels[i]).collect();
    Ok(ViewBatch { views: Tensor::new(vec![2 * b, c, s, s], views)?, labels })
}

/// Shuffled minibatches of indices; the last batch may be short.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests;
