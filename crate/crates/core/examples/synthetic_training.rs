//! Trains a two-layer encoder on synthetic colour blobs and probes it.
//!
//! cargo run --release --example synthetic_training -- [seed] [epochs]

use std::time::Instant;

use cfflab::data::AugmentConfig;
use cfflab::train::{run_seeded_experiment, DatasetSpec, RunSpec, TrainConfig};
use cfflab::vit::EncoderConfig;

fn main() -> cfflab::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let epochs = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(40);

    let data = DatasetSpec::Synthetic {
        classes: 3,
        train_per_class: 60,
        test_per_class: 100,
        image_size: 8,
        noise_std: 1.0,
        data_seed: 0,
    }
    .load()?;
    let mut train = TrainConfig::desk();
    train.stage1_epochs = epochs;
    let spec = RunSpec {
        condition: "clamp_detach".into(),
        seed,
        encoder: EncoderConfig::default(),
        train,
        augment: AugmentConfig::synthetic(),
    };
    let t = Instant::now();
    let rec = run_seeded_experiment(&spec, &data)?;
    println!("status {:?}, test accuracy {:?}% at probe epoch {:?}", rec.status, rec.test_accuracy, rec.best_epoch);
    for (e, l) in rec.stage1_losses.iter().enumerate().step_by((epochs / 6).max(1)) {
        println!("epoch {e:>3}  layer losses {l:.4?}");
    }
    if let Some(s) = rec.snapshots.last() {
        println!("CAR by layer {:.3?}, grad norm by layer {:.4?}", s.per_layer_car, s.per_layer_grad_norm);
    }
    println!("elapsed {:.1?}", t.elapsed());
    Ok(())
}
