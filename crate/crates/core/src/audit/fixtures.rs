//! Published per-seed accuracies bundled as manifests.

pub const CIFAR10_STANDARD: &str = include_str!("../../fixtures/cifar10_standard.csv");
pub const CIFAR10_LOW_MARGIN: &str = include_str!("../../fixtures/cifar10_low_margin.csv");
pub const CIFAR100: &str = include_str!("../../fixtures/cifar100.csv");
pub const SVHN: &str = include_str!("../../fixtures/svhn.csv");
pub const FASHION_MNIST: &str = include_str!("../../fixtures/fashion_mnist.csv");
pub const SVHN_SWEEP_MEDIUM: &str = include_str!("../../fixtures/svhn_sweep_medium.csv");
pub const SVHN_SWEEP_HARD: &str = include_str!("../../fixtures/svhn_sweep_hard.csv");

pub const ALL: [(&str, &str); 7] = [
    ("cifar10_standard", CIFAR10_STANDARD),
    ("cifar10_low_margin", CIFAR10_LOW_MARGIN),
    ("cifar100", CIFAR100),
    ("svhn", SVHN),
    ("fashion_mnist", FASHION_MNIST),
    ("svhn_sweep_medium", SVHN_SWEEP_MEDIUM),
    ("svhn_sweep_hard", SVHN_SWEEP_HARD),
];

pub fn by_name(name: &str) -> Option<&'static str> {
    ALL.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}
