//! Two-stage training: layer-local contrastive pre-training of the encoder,
//! then a linear probe on frozen features.

mod optim;
mod probe;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::{epoch_batches, make_synthetic_blobs, make_two_view_batch, load_cifar_binary, AugmentConfig, ImageDataset, Split, ViewBatch};
use crate::diagnostics::{clamp_activation_rate, layer_gradient_norm, DiagnosticSnapshot, EpochDiagnostics};
use crate::error::{Error, Result};
use crate::loss::{layer_loss, similarity_matrix, LossConfig, MarginType, SimilarityContext, StabilityMode};
use crate::rng::{stream, Rng, Stream};
use crate::tensor::Tensor;
use crate::vit::{forward_all_layers, Encoder, EncoderConfig, Locality};

pub use optim::{AdamW, AdamWConfig};
pub use probe::{train_linear_probe, Features, LinearProbe, ProbeResult};

/// `m_ℓ = m_0 + (m_last − m_0)·ℓ/(L − 1)`; a single layer gets `m_0`.
pub fn margin_schedule(m0: f64, m_last: f64, layers: usize) -> Vec<f64> {
    match layers {
        0 => Vec::new(),
        1 => vec![m0],
        l => (0..l)
            .map(|i| {
                let t = i as f64 / (l - 1) as f64;
                m0 * (1.0 - t) + m_last * t
            })
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub batch_size: usize,
    pub stage1_opt: AdamWConfig,
    pub stage2_opt: AdamWConfig,
    pub tau: f64,
    pub margin_type: MarginType,
    pub stability_mode: StabilityMode,
    pub margin_start: f64,
    pub margin_end: f64,
    /// Images held out of the training split for probe model selection.
    pub val_size: usize,
    /// Probe on every layer's representation instead of the last one.
    #[serde(default)]
    pub probe_all_layers: bool,
    /// Stage-1 epochs (zero-based) with diagnostics; empty means final only.
    #[serde(default)]
    pub diagnostic_epochs: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Full-scale hyperparameters.
    pub fn full_scale() -> Self {
        TrainConfig {
            stage1_epochs: 600,
            stage2_epochs: 50,
            batch_size: 512,
            stage1_opt: AdamWConfig::new(4e-3, 1e-4),
            stage2_opt: AdamWConfig::new(5e-4, 0.0),
            tau: 0.15,
            margin_type: MarginType::Clamp,
            stability_mode: StabilityMode::Detach,
            margin_start: 0.4,
            margin_end: 0.1,
            val_size: 5000,
            probe_all_layers: false,
            diagnostic_epochs: Vec::new(),
        }
    }

    /// Small settings for synthetic data on one CPU core.
    pub fn desk() -> Self {
        TrainConfig {
            stage1_epochs: 30,
            stage2_epochs: 30,
            batch_size: 32,
            stage1_opt: AdamWConfig::new(4e-3, 1e-4),
            stage2_opt: AdamWConfig::new(1e-2, 0.0),
            val_size: 30,
            ..Self::full_scale()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage1_epochs == 0 || self.stage2_epochs == 0 {
            return Err(Error::Invalid("epoch counts must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Invalid("batch_size must be at least 2".into()));
        }
        self.stage1_opt.validate()?;
        self.stage2_opt.validate()?;
        self.loss_config(self.margin_start)?;
        self.loss_config(self.margin_end)?;
        Ok(())
    }

    pub fn margins(&self, layers: usize) -> Vec<f64> {
        margin_schedule(self.margin_start, self.margin_end, layers)
    }

    pub fn loss_config(&self, margin: f64) -> Result<LossConfig> {
        LossConfig::new(self.tau, margin, self.margin_type, self.stability_mode)
    }

    fn wants_diagnostics(&self, epoch: usize) -> bool {
        if self.diagnostic_epochs.is_empty() {
            epoch + 1 == self.stage1_epochs
        } else {
            self.diagnostic_epochs.contains(&epoch)
        }
    }
}

/// Result of one layer's loss on one batch.
#[derive(Clone, Debug)]
pub struct LayerStep {
    pub layer: usize,
    pub loss: f64,
    /// Gradients in [`crate::vit::LayerGroup::named`] order.
    pub grads: Vec<Tensor>,
    pub car: f64,
    pub grad_norm: f64,
}

fn diverged(e: Error) -> Error {
    match e {
        Error::NonFinite { .. } | Error::Overflow { .. } | Error::Degenerate(_) => Error::Diverged(e.to_string()),
        other => other,
    }
}

/// One forward pass, then a separate backward pass for each requested
/// layer's loss.
pub fn layer_local_gradients(
    enc: &Encoder,
    batch: &ViewBatch,
    cfg: &TrainConfig,
    layers: &[usize],
) -> Result<Vec<LayerStep>> {
    let margins = cfg.margins(enc.config.num_layers);
    let ctx = SimilarityContext::new(&batch.labels)?;
    let mut g = Graph::new();
    let bound = enc.bind(&mut g, true);
    let outs = forward_all_layers(&mut g, &bound, &batch.views, Locality::Blocked).map_err(diverged)?;
    let mut steps = Vec::with_capacity(layers.len());
    for &l in layers {
        let s = similarity_matrix(&mut g, outs[l].z).map_err(diverged)?;
        let loss = layer_loss(&mut g, s, &ctx, &cfg.loss_config(margins[l])?).map_err(diverged)?;
        let grads = g.backward(loss)?;
        let vars = bound.layers[l].vars();
        let grad_norm = layer_gradient_norm(&grads, &vars)?;
        let car = clamp_activation_rate(g.value(s), &ctx, margins[l])?;
        let params = enc.layers[l].named();
        let grads = vars.iter().zip(&params).map(|(&v, (_, t))| grads.get_or_zeros(v, t)).collect();
        steps.push(LayerStep { layer: l, loss: g.value(loss).item(), grads, car, grad_norm });
    }
    Ok(steps)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Report {
    /// Mean loss per layer for every epoch.
    pub epoch_losses: Vec<Vec<f64>>,
    pub snapshots: Vec<DiagnosticSnapshot>,
}

/// Random streams owned by one run.
pub struct RunRngs {
    pub init: Rng,
    pub shuffle: Rng,
    pub augment: Rng,
    pub probe: Rng,
}

impl RunRngs {
    pub fn new(seed: u64) -> Self {
        RunRngs {
            init: stream(seed, Stream::Init),
            shuffle: stream(seed, Stream::Shuffle),
            augment: stream(seed, Stream::Augment),
            probe: stream(seed, Stream::Probe),
        }
    }
}

/// Simultaneous layer-local training: every batch runs all layer losses
/// and steps each layer's optimiser on its own gradients.
pub fn stage1_train(
    enc: &mut Encoder,
    data: &ImageDataset,
    aug: &AugmentConfig,
    cfg: &TrainConfig,
    rngs: &mut RunRngs,
) -> Result<Stage1Report> {
    cfg.validate()?;
    aug.validate(data.channels())?;
    let l = enc.config.num_layers;
    let margins = cfg.margins(l);
    let all: Vec<usize> = (0..l).collect();
    let mut optims: Vec<AdamW> = enc
        .layers
        .iter()
        .map(|layer| {
            let shapes: Vec<&[usize]> = layer.named().into_iter().map(|(_, t)| t.shape()).collect();
            AdamW::new(cfg.stage1_opt, &shapes)
        })
        .collect();
    let mut report = Stage1Report { epoch_losses: Vec::new(), snapshots: Vec::new() };
    for epoch in 0..cfg.stage1_epochs {
        let mut diag = cfg.wants_diagnostics(epoch).then(|| EpochDiagnostics::new(l));
        let mut loss_sum = vec![0.0; l];
        let batches = epoch_batches(data.len(), cfg.batch_size, &mut rngs.shuffle);
        for idx in &batches {
            let batch = make_two_view_batch(data, idx, aug, &mut rngs.augment)?;
            let steps = layer_local_gradients(enc, &batch, cfg, &all)?;
            if let Some(d) = diag.as_mut() {
                let car: Vec<f64> = steps.iter().map(|s| s.car).collect();
                let gn: Vec<f64> = steps.iter().map(|s| s.grad_norm).collect();
                d.record(&car, &gn);
            }
            for (step, (layer, opt)) in steps.into_iter().zip(enc.layers.iter_mut().zip(&mut optims)) {
                loss_sum[step.layer] += step.loss;
                opt.step(&mut layer.tensors_mut(), &step.grads)?;
                if !layer.is_finite() {
                    return Err(Error::Diverged(format!("layer {} parameters became non-finite", step.layer)));
                }
            }
        }
        report.epoch_losses.push(loss_sum.iter().map(|s| s / batches.len() as f64).collect());
        if let Some(snap) = diag.and_then(|d| d.finish(epoch, &margins)) {
            report.snapshots.push(snap);
        }
    }
    Ok(report)
}

/// Probe features of a dataset: normalised images through the frozen encoder.
pub fn extract_features(enc: &Encoder, data: &ImageDataset, aug: &AugmentConfig, all_layers: bool) -> Result<Features> {
    let images = data.normalized_images(aug)?;
    Ok(Features { x: enc.features(&images, all_layers)?, y: data.labels.clone() })
}

/// Trains a linear probe on frozen features and returns its test accuracy
/// at the best-validation epoch. The encoder is only read.
pub fn stage2_linear_probe(
    enc: &Encoder,
    train: &ImageDataset,
    val: &ImageDataset,
    test: &ImageDataset,
    aug: &AugmentConfig,
    cfg: &TrainConfig,
    rngs: &mut RunRngs,
) -> Result<ProbeResult> {
    let ft = extract_features(enc, train, aug, cfg.probe_all_layers)?;
    let fv = extract_features(enc, val, aug, cfg.probe_all_layers)?;
    let fs = extract_features(enc, test, aug, cfg.probe_all_layers)?;
    train_linear_probe(
        &ft,
        &fv,
        &fs,
        train.num_classes,
        cfg.stage2_epochs,
        cfg.batch_size,
        cfg.stage2_opt,
        &mut rngs.probe,
        &mut rngs.shuffle,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Class templates plus noise; the last `test_per_class` images of every
    /// class form the test split.
    Synthetic {
        classes: usize,
        train_per_class: usize,
        test_per_class: usize,
        image_size: usize,
        noise_std: f64,
        #[serde(default)]
        data_seed: u64,
    },
    CifarBinary {
        train_files: Vec<PathBuf>,
        test_file: PathBuf,
        num_classes: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Datasets {
    /// Training split before the validation hold-out.
    pub train: ImageDataset,
    pub test: ImageDataset,
}

impl DatasetSpec {
    pub fn load(&self) -> Result<Datasets> {
        match self {
            DatasetSpec::Synthetic { classes, train_per_class, test_per_class, image_size, noise_std, data_seed } => {
                let per = train_per_class + test_per_class;
                let all = make_synthetic_blobs(*classes, per, *image_size, *noise_std, *data_seed)?;
                let (mut tr, mut te) = (Vec::new(), Vec::new());
                for c in 0..*classes {
                    tr.extend(c * per..c * per + train_per_class);
                    te.extend(c * per + train_per_class..(c + 1) * per);
                }
                if te.is_empty() {
                    return Err(Error::Invalid("synthetic dataset needs test_per_class >= 1".into()));
                }
                Ok(Datasets { train: all.subset(&tr, Split::Train)?, test: all.subset(&te, Split::Test)? })
            }
            DatasetSpec::CifarBinary { train_files, test_file, num_classes } => {
                let parts = train_files
                    .iter()
                    .map(|p| load_cifar_binary(p, *num_classes, Split::Train))
                    .collect::<Result<Vec<_>>>()?;
                let train = concat(&parts)?;
                let test = load_cifar_binary(test_file, *num_classes, Split::Test)?;
                Ok(Datasets { train, test })
            }
        }
    }
}

fn concat(parts: &[ImageDataset]) -> Result<ImageDataset> {
    let first = parts.first().ok_or_else(|| Error::Invalid("no training files listed".into()))?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for p in parts {
        data.extend_from_slice(p.images.data());
        labels.extend_from_slice(&p.labels);
    }
    let mut shape = first.images.shape().to_vec();
    shape[0] = labels.len();
    ImageDataset::new(Tensor::new(shape, data)?, labels, first.num_classes, Split::Train)
}

/// Everything that determines one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub condition: String,
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

pub const RUN_RECORD_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub version: u32,
    pub condition: String,
    pub seed: u64,
    pub status: RunStatus,
    /// Failure reason when `status` is failed.
    pub error: Option<String>,
    /// Percent, at the best-validation probe epoch.
    pub test_accuracy: Option<f64>,
    pub best_epoch: Option<usize>,
    pub val_curve: Vec<f64>,
    pub test_curve: Vec<f64>,
    pub margins: Vec<f64>,
    pub stage1_losses: Vec<Vec<f64>>,
    pub snapshots: Vec<DiagnosticSnapshot>,
    pub init_checksum: u64,
    pub final_checksum: Option<u64>,
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }
}

/// Runs both stages for one seed. Divergence is recorded in the returned
/// record rather than returned as an error.
pub fn run_seeded_experiment(spec: &RunSpec, data: &Datasets) -> Result<RunRecord> {
    spec.encoder.validate()?;
    spec.train.validate()?;
    if data.train.image_size() != spec.encoder.image_size || data.train.channels() != spec.encoder.channels {
        return Err(Error::Invalid(format!(
            "dataset images are {}×{}×{}, encoder expects {}×{}×{}",
            data.train.channels(),
            data.train.image_size(),
            data.train.image_size(),
            spec.encoder.channels,
            spec.encoder.image_size,
            spec.encoder.image_size
        )));
    }
    let mut rngs = RunRngs::new(spec.seed);
    let mut enc = Encoder::init(spec.encoder.clone(), &mut rngs.init)?;
    let init_checksum = enc.checksum();
    let (train, val) = data.train.split_validation(spec.train.val_size, &mut rngs.shuffle)?;
    let mut record = RunRecord {
        version: RUN_RECORD_VERSION,
        condition: spec.condition.clone(),
        seed: spec.seed,
        status: RunStatus::Ok,
        error: None,
        test_accuracy: None,
        best_epoch: None,
        val_curve: Vec::new(),
        test_curve: Vec::new(),
        margins: spec.train.margins(spec.encoder.num_layers),
        stage1_losses: Vec::new(),
        snapshots: Vec::new(),
        init_checksum,
        final_checksum: None,
    };
    let outcome = stage1_train(&mut enc, &train, &spec.augment, &spec.train, &mut rngs).and_then(|s1| {
        record.stage1_losses = s1.epoch_losses;
        record.snapshots = s1.snapshots;
        stage2_linear_probe(&enc, &train, &val, &data.test, &spec.augment, &spec.train, &mut rngs)
    });
    match outcome {
        Ok(probe) => {
            record.test_accuracy = Some(probe.test_accuracy);
            record.best_epoch = Some(probe.best_epoch);
            record.val_curve = probe.val_curve;
            record.test_curve = probe.test_curve;
            record.final_checksum = Some(enc.checksum());
        }
        Err(Error::Diverged(msg)) => {
            record.status = RunStatus::Failed;
            record.error = Some(msg);
        }
        Err(e) => return Err(e),
    }
    Ok(record)
}
