//! Percentile bootstrap for the ratio of sample variances.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sample_variance;
use crate::error::{Error, Result};
use crate::rng::substream;

pub const MIN_RESAMPLES: usize = 1000;
/// Consecutive zero-variance redraws tolerated within one resample.
const MAX_REDRAWS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub low: f64,
    pub high: f64,
    pub resamples: usize,
    /// Resamples redrawn because the denominator variance was zero.
    pub redraws: usize,
    pub seed: u64,
}

/// Linear interpolation between order statistics: position `q·(n − 1)`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty() && (0.0..=1.0).contains(&q));
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn draw(values: &[f64], rng: &mut crate::rng::Rng) -> Vec<f64> {
    (0..values.len()).map(|_| values[rng.random_range(0..values.len())]).collect()
}

/// 95% percentile interval of `var(g1*) / var(g2*)` over resamples drawn
/// with replacement. Resample `i` uses substream `i` of `seed`, so the
/// result does not depend on the thread count.
pub fn bootstrap_vr_ci(group1: &[f64], group2: &[f64], resamples: usize, seed: u64) -> Result<BootstrapCi> {
    if resamples < MIN_RESAMPLES {
        return Err(Error::Invalid(format!("need at least {MIN_RESAMPLES} resamples, got {resamples}")));
    }
    sample_variance(group1)?;
    if sample_variance(group2)? == 0.0 {
        return Err(Error::Degenerate("denominator group has zero variance".into()));
    }
    let draws: Vec<(f64, usize)> = (0..resamples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i);
            let mut redraws = 0;
            loop {
                let a = draw(group1, &mut rng);
                let b = draw(group2, &mut rng);
                let vb = sample_variance(&b)?;
                if vb > 0.0 {
                    return Ok((sample_variance(&a)? / vb, redraws));
                }
                redraws += 1;
                if redraws > MAX_REDRAWS {
                    return Err(Error::Degenerate("bootstrap kept drawing constant resamples".into()));
                }
            }
        })
        .collect::<Result<_>>()?;
    let redraws = draws.iter().map(|d| d.1).sum();
    let mut ratios: Vec<f64> = draws.into_iter().map(|d| d.0).collect();
    ratios.sort_by(f64::total_cmp);
    Ok(BootstrapCi {
        low: percentile(&ratios, 0.025),
        high: percentile(&ratios, 0.975),
        resamples,
        redraws,
        seed,
    })
}
