use proptest::prelude::*;
use rand::Rng as _;

use super::*;
use crate::loss::SimilarityContext;
use crate::rng::{stream, substream, Stream};

fn ramp(c: usize, s: usize) -> Vec<f64> {
    (0..c * s * s).map(|i| i as f64 / (c * s * s) as f64).collect()
}

#[test]
fn identity_pipeline_only_normalises() {
    let img = ramp(3, 4);
    let cfg = AugmentConfig::identity(3);
    let mut rng = stream(1, Stream::Augment);
    let out = augment(&img, 3, 4, &cfg, &mut rng).unwrap();
    let want: Vec<f64> = img.iter().map(|p| (p - 0.5) / 0.5).collect();
    assert_eq!(out, want);
}

#[test]
fn double_flip_is_identity() {
    let img = ramp(3, 5);
    let mut x = img.clone();
    hflip(&mut x, 3, 5);
    assert_ne!(x, img);
    assert_eq!(x[0], img[4]);
    hflip(&mut x, 3, 5);
    assert_eq!(x, img);

    let cfg = AugmentConfig { hflip_prob: 1.0, mean: vec![0.0; 3], std: vec![1.0; 3], ..AugmentConfig::identity(3) };
    let mut rng = stream(2, Stream::Augment);
    let once = augment(&img, 3, 5, &cfg, &mut rng).unwrap();
    let twice = augment(&once, 3, 5, &cfg, &mut rng).unwrap();
    assert_eq!(twice, img);
}

#[test]
fn crop_matches_padded_index_map() {
    let (c, s, p) = (2, 5, 2);
    let img = ramp(c, s);
    let w = s + 2 * p;
    // explicit padded image as the oracle
    let mut padded = vec![0.0; c * w * w];
    for ch in 0..c {
        for y in 0..s {
            for x in 0..s {
                padded[(ch * w + y + p) * w + x + p] = img[(ch * s + y) * s + x];
            }
        }
    }
    for dy in 0..=2 * p {
        for dx in 0..=2 * p {
            let out = pad_crop(&img, c, s, p, dy, dx);
            for ch in 0..c {
                for y in 0..s {
                    for x in 0..s {
                        assert_eq!(out[(ch * s + y) * s + x], padded[(ch * w + y + dy) * w + x + dx]);
                    }
                }
            }
        }
    }
    assert_eq!(pad_crop(&img, c, s, p, p, p), img);
}

#[test]
fn quarter_turns_compose_to_identity() {
    let img = ramp(3, 6);
    assert_eq!(rotate_nearest(&img, 3, 6, 0.0), img);
    let mut x = img.clone();
    for _ in 0..4 {
        x = rotate_nearest(&x, 3, 6, 90.0);
    }
    assert_eq!(x, img);
    assert_ne!(rotate_nearest(&img, 3, 6, 90.0), img);
}

#[test]
fn jitter_and_erase() {
    let mut x = vec![0.2, 0.6, 0.9];
    adjust_brightness(&mut x, 1.5);
    assert_eq!(x, vec![0.30000000000000004, 0.8999999999999999, 1.0]);
    let mut y = vec![0.2, 0.4, 0.6];
    adjust_contrast(&mut y, 0.5);
    assert!((y[0] - 0.3).abs() < 1e-15 && (y[1] - 0.4).abs() < 1e-15 && (y[2] - 0.5).abs() < 1e-15);
    let mut z = vec![1.0; 2 * 4 * 4];
    erase(&mut z, 2, 4, 1, 1, 2, 3);
    assert_eq!(z.iter().filter(|&&v| v == 0.0).count(), 2 * 6);
    assert_eq!(z[4 + 1], 0.0);
    assert_eq!(z[16 + 4 * 2 + 3], 0.0);
    assert_eq!(z[0], 1.0);
}

#[test]
fn presets_validate() {
    for name in ["cifar10", "svhn", "svhn_medium", "svhn_hard", "fashion_mnist", "synthetic", "identity"] {
        AugmentConfig::preset(name).unwrap().validate(3).unwrap();
    }
    assert!(AugmentConfig::preset("imagenet").is_err());
    let mut bad = AugmentConfig::synthetic();
    bad.hflip_prob = 1.5;
    assert!(bad.validate(3).is_err());
}

#[test]
fn cifar_records_parse() {
    let mut bytes = vec![0u8; 2 * CIFAR_RECORD_BYTES];
    bytes[0] = 3;
    bytes[CIFAR_RECORD_BYTES] = 7;
    bytes[CIFAR_RECORD_BYTES + 1] = 255;
    let d = parse_cifar_bytes(&bytes, 10, Split::Train).unwrap();
    assert_eq!(d.images.shape(), &[2, 3, 32, 32]);
    assert_eq!(d.labels, vec![3, 7]);
    assert!(d.image(0).iter().all(|&p| p == 0.0));
    assert_eq!(d.image(1)[0], 1.0);
}

#[test]
fn cifar_errors_carry_offsets() {
    let mut bytes = vec![0u8; 2 * CIFAR_RECORD_BYTES + 100];
    match parse_cifar_bytes(&bytes, 10, Split::Train) {
        Err(Error::Malformed { offset, .. }) => assert_eq!(offset, 2 * CIFAR_RECORD_BYTES as u64),
        other => panic!("{other:?}"),
    }
    bytes.truncate(2 * CIFAR_RECORD_BYTES);
    bytes[CIFAR_RECORD_BYTES] = 10;
    match parse_cifar_bytes(&bytes, 10, Split::Train) {
        Err(Error::Malformed { offset, .. }) => assert_eq!(offset, CIFAR_RECORD_BYTES as u64),
        other => panic!("{other:?}"),
    }
    assert!(matches!(parse_cifar_bytes(&[], 10, Split::Train), Err(Error::Malformed { offset: 0, .. })));
}

#[test]
fn cifar_round_trip() {
    let mut rng = substream(4, 0);
    let n = 5;
    let pixels: Vec<f64> = (0..n * 3072).map(|_| f64::from(rng.random::<u8>()) / 255.0).collect();
    let labels: Vec<usize> = (0..n).map(|i| (i * 3) % 10).collect();
    let d = ImageDataset::new(Tensor::new(vec![n, 3, 32, 32], pixels).unwrap(), labels, 10, Split::Test).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("batch.bin");
    write_cifar_binary(&path, &d).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len(), (n * CIFAR_RECORD_BYTES) as u64);
    let back = load_cifar_binary(&path, 10, Split::Test).unwrap();
    assert_eq!(back, d);
}

#[test]
fn synthetic_blobs_are_deterministic() {
    let a = make_synthetic_blobs(3, 4, 8, 0.1, 7).unwrap();
    let b = make_synthetic_blobs(3, 4, 8, 0.1, 7).unwrap();
    assert_eq!(a, b);
    let c = make_synthetic_blobs(3, 4, 8, 0.1, 8).unwrap();
    assert_ne!(a.images, c.images);
    let clean = make_synthetic_blobs(3, 4, 8, 0.0, 7).unwrap();
    assert_eq!(clean.image(0), clean.image(3));
    assert_ne!(clean.image(0), clean.image(4));
    assert_eq!(clean.labels, vec![0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2]);
    assert!(make_synthetic_blobs(1, 4, 8, 0.1, 7).is_err());
}

#[test]
fn two_view_batch_layout() {
    let d = make_synthetic_blobs(3, 4, 8, 0.1, 1).unwrap();
    let idx = [0, 5, 9, 2];
    let mut rng = stream(1, Stream::Augment);
    let vb = make_two_view_batch(&d, &idx, &AugmentConfig::identity(3), &mut rng).unwrap();
    assert_eq!(vb.views.shape(), &[8, 3, 8, 8]);
    assert_eq!(vb.batch_size(), 4);
    let k = 3 * 64;
    for u in 0..4 {
        assert_eq!(vb.labels[u], vb.labels[u + 4]);
        assert_eq!(vb.views.data()[u * k..(u + 1) * k], vb.views.data()[(u + 4) * k..(u + 5) * k]);
    }
    let ctx = SimilarityContext::new(&vb.labels).unwrap();
    assert!((0..8).all(|u| !ctx.positives(u).is_empty()));

    let aug = make_two_view_batch(&d, &idx, &AugmentConfig::synthetic(), &mut rng).unwrap();
    assert_ne!(aug.views.data()[..k], aug.views.data()[4 * k..5 * k]);
}

#[test]
fn validation_split_is_disjoint_and_seeded() {
    let d = make_synthetic_blobs(3, 10, 4, 0.1, 1).unwrap();
    let (t1, v1) = d.split_validation(6, &mut stream(3, Stream::Shuffle)).unwrap();
    let (t2, v2) = d.split_validation(6, &mut stream(3, Stream::Shuffle)).unwrap();
    assert_eq!((&t1, &v1), (&t2, &v2));
    assert_eq!((t1.len(), v1.len()), (24, 6));
    assert_eq!(v1.split, Split::Val);
    assert!(d.split_validation(30, &mut stream(3, Stream::Shuffle)).is_err());
}

#[test]
fn positive_pair_counts() {
    let (b, k) = (512usize, 10usize);
    let mut rng = substream(99, 0);
    let trials = 50;
    let mut total = 0.0;
    for _ in 0..trials {
        let mut counts = vec![0usize; k];
        for _ in 0..b {
            counts[rng.random_range(0..k)] += 1;
        }
        // two views per image, ordered pairs, self excluded
        total += counts.iter().map(|&m| (2 * m * (2 * m - 1)) as f64).sum::<f64>();
    }
    let simulated = total / trials as f64;
    let view_level = (2 * b) as f64 * ((2 * b) as f64 / k as f64 - 1.0);
    assert!((simulated / view_level - 1.0).abs() < 0.05, "{simulated} vs {view_level}");
    let image_level = b as f64 * (b as f64 / k as f64 - 1.0);
    assert!((image_level - 25_700.0).abs() / 25_700.0 < 0.01);
}

proptest! {
    #[test]
    fn augmented_values_stay_in_normalised_range(seed in any::<u64>(), preset in 0usize..5) {
        let cfg = [
            AugmentConfig::cifar(),
            AugmentConfig::svhn_medium(),
            AugmentConfig::svhn_hard(),
            AugmentConfig::fashion_mnist(),
            AugmentConfig::synthetic(),
        ][preset].clone();
        let mut rng = substream(seed, 2);
        let img: Vec<f64> = (0..3 * 16 * 16).map(|_| rng.random::<f64>()).collect();
        let out = augment(&img, 3, 16, &cfg, &mut rng).unwrap();
        for ch in 0..3 {
            let lo = (0.0 - cfg.mean[ch]) / cfg.std[ch];
            let hi = (1.0 - cfg.mean[ch]) / cfg.std[ch];
            for &v in &out[ch * 256..(ch + 1) * 256] {
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }
}
