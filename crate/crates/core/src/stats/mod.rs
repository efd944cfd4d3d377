//! Seed-variance statistics.
//!
//! Distribution functions come from `statrs`; everything else (the tests,
//! Levene variants, Shapiro–Wilk and the bootstrap) lives here.

mod bootstrap;
mod levene;
mod shapiro;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

use crate::error::{Error, Result};

pub use bootstrap::{bootstrap_vr_ci, percentile, BootstrapCi};
pub use levene::{
    levene_factorial, levene_one_way, levene_two_way_anova, Center, FactorialLevene, FactorialTable,
    TwoWayAnovaLevene,
};
pub use shapiro::shapiro_wilk;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub method: String,
    pub statistic: f64,
    /// One entry for t-type tests, two for F-type tests.
    pub dof: Vec<f64>,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedGroup {
    pub label: String,
    pub values: Vec<f64>,
}

impl SeedGroup {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Self {
        SeedGroup { label: label.into(), values }
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn mean(&self) -> Result<f64> {
        mean(&self.values)
    }

    pub fn variance(&self) -> Result<f64> {
        sample_variance(&self.values)
    }

    pub fn std(&self) -> Result<f64> {
        Ok(self.variance()?.sqrt())
    }

    /// Concatenation of several groups under a new label.
    pub fn pooled(label: impl Into<String>, groups: &[&SeedGroup]) -> Self {
        SeedGroup::new(label, groups.iter().flat_map(|g| g.values.iter().copied()).collect())
    }
}

pub fn mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Invalid("mean of an empty sample".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// `Σ(x − x̄)² / (n − 1)`.
pub fn sample_variance(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::Invalid(format!("sample variance needs n >= 2, got {}", values.len())));
    }
    let m = mean(values)?;
    Ok(values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64)
}

pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Invalid("median of an empty sample".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

pub(crate) fn f_sf(f: f64, d1: f64, d2: f64) -> f64 {
    FisherSnedecor::new(d1, d2).expect("positive degrees of freedom").sf(f)
}

pub(crate) fn f_cdf(f: f64, d1: f64, d2: f64) -> f64 {
    FisherSnedecor::new(d1, d2).expect("positive degrees of freedom").cdf(f)
}

pub(crate) fn t_dist(dof: f64) -> StudentsT {
    StudentsT::new(0.0, 1.0, dof).expect("positive degrees of freedom")
}

/// Variance-ratio F-test; the p-value doubles the smaller tail.
pub fn f_test_two_sided(group1: &[f64], group2: &[f64]) -> Result<TestResult> {
    let v1 = sample_variance(group1)?;
    let v2 = sample_variance(group2)?;
    if v2 == 0.0 {
        return Err(Error::Degenerate("F-test denominator variance is zero".into()));
    }
    let f = v1 / v2;
    let (d1, d2) = ((group1.len() - 1) as f64, (group2.len() - 1) as f64);
    let lower = f_cdf(f, d1, d2);
    let upper = f_sf(f, d1, d2);
    let p = (2.0 * lower.min(upper)).min(1.0);
    Ok(TestResult { method: "F-test (two-sided)".into(), statistic: f, dof: vec![d1, d2], p_value: p })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub test: TestResult,
    /// `mean(group1) − mean(group2)`.
    pub mean_diff: f64,
    pub ci95: (f64, f64),
}

/// Unequal-variance two-sample t-test with Welch–Satterthwaite dof.
pub fn welch_t_test(group1: &[f64], group2: &[f64]) -> Result<WelchResult> {
    let (n1, n2) = (group1.len() as f64, group2.len() as f64);
    let (v1, v2) = (sample_variance(group1)?, sample_variance(group2)?);
    let diff = mean(group1)? - mean(group2)?;
    let (a, b) = (v1 / n1, v2 / n2);
    let se2 = a + b;
    if se2 == 0.0 {
        let p = if diff == 0.0 { 1.0 } else { 0.0 };
        return Ok(WelchResult {
            test: TestResult {
                method: "Welch t-test".into(),
                statistic: if diff == 0.0 { 0.0 } else { diff.signum() * f64::INFINITY },
                dof: vec![n1 + n2 - 2.0],
                p_value: p,
            },
            mean_diff: diff,
            ci95: (diff, diff),
        });
    }
    let t = diff / se2.sqrt();
    let dof = se2 * se2 / (a * a / (n1 - 1.0) + b * b / (n2 - 1.0));
    let dist = t_dist(dof);
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    let q = dist.inverse_cdf(0.975);
    let half = q * se2.sqrt();
    Ok(WelchResult {
        test: TestResult { method: "Welch t-test".into(), statistic: t, dof: vec![dof], p_value: p },
        mean_diff: diff,
        ci95: (diff - half, diff + half),
    })
}
