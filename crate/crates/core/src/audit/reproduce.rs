//! Re-derives the published seed statistics from the bundled fixtures.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{fixtures, group_rows, parse_manifest, GroupBy};
use crate::error::{Error, Result};
use crate::stats::{
    bootstrap_vr_ci, f_test_two_sided, levene_factorial, shapiro_wilk, welch_t_test, Center, SeedGroup,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Expect {
    Near { value: f64, tol: f64 },
    Within { low: f64, high: f64 },
    /// Shown for comparison, never fails.
    Info { value: f64 },
}

impl Expect {
    fn holds(&self, x: f64) -> bool {
        match *self {
            Expect::Near { value, tol } => (x - value).abs() <= tol,
            Expect::Within { low, high } => (low..=high).contains(&x),
            Expect::Info { .. } => true,
        }
    }

    fn describe(&self) -> String {
        match *self {
            Expect::Near { value, tol } => format!("{value} ± {tol}"),
            Expect::Within { low, high } => format!("[{low}, {high}]"),
            Expect::Info { value } => format!("{value} (info)"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub expected: Expect,
    pub computed: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReproductionReport {
    pub checks: Vec<Check>,
}

impl ReproductionReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<46} {:>22} {:>12}  result", "statistic", "reference", "computed");
        for c in &self.checks {
            let verdict = match (c.expected, c.pass) {
                (Expect::Info { .. }, _) => "info",
                (_, true) => "PASS",
                (_, false) => "FAIL",
            };
            let _ = writeln!(out, "{:<46} {:>22} {:>12.5}  {verdict}", c.name, c.expected.describe(), c.computed);
        }
        let failed = self.checks.iter().filter(|c| !c.pass).count();
        let _ = writeln!(out, "{} checks, {failed} failed", self.checks.len());
        out
    }
}

struct Checks(Vec<Check>);

impl Checks {
    fn near(&mut self, name: &str, value: f64, tol: f64, computed: f64) {
        self.push(name, Expect::Near { value, tol }, computed);
    }

    fn within(&mut self, name: &str, low: f64, high: f64, computed: f64) {
        self.push(name, Expect::Within { low, high }, computed);
    }

    fn info(&mut self, name: &str, value: f64, computed: f64) {
        self.push(name, Expect::Info { value }, computed);
    }

    fn push(&mut self, name: &str, expected: Expect, computed: f64) {
        self.0.push(Check { name: name.into(), expected, computed, pass: expected.holds(computed) });
    }
}

fn groups(text: &str, by: GroupBy) -> Result<Vec<SeedGroup>> {
    group_rows(&parse_manifest(text)?, by)
}

fn get<'a>(groups: &'a [SeedGroup], label: &str) -> Result<&'a SeedGroup> {
    groups
        .iter()
        .find(|g| g.label == label)
        .ok_or_else(|| Error::Invalid(format!("fixture group `{label}` missing")))
}

/// Runs every published statistic against the bundled fixtures.
pub fn reproduce_published_stats(bootstrap_seed: u64) -> Result<ReproductionReport> {
    let mut c = Checks(Vec::new());

    let cells = groups(fixtures::CIFAR10_STANDARD, GroupBy::Cell)?;
    c.near("cifar10 clamp_detach variance", 0.8590, 0.0005, get(&cells, "clamp_detach")?.variance()?);
    c.near("cifar10 subtract_detach variance", 0.2178, 0.0005, get(&cells, "subtract_detach")?.variance()?);

    let pooled = groups(fixtures::CIFAR10_STANDARD, GroupBy::Margin)?;
    let (clamp, sub) = (get(&pooled, "clamp")?, get(&pooled, "subtract")?);
    c.near("cifar10 pooled clamp mean", 78.48, 0.005, clamp.mean()?);
    c.near("cifar10 pooled subtract mean", 78.51, 0.005, sub.mean()?);
    c.near("cifar10 pooled clamp std", 1.008, 0.005, clamp.std()?);
    c.near("cifar10 pooled subtract std", 0.415, 0.005, sub.std()?);
    c.near("cifar10 pooled clamp variance", 1.0170, 0.0005, clamp.variance()?);
    c.near("cifar10 pooled subtract variance", 0.1724, 0.0005, sub.variance()?);
    let f = f_test_two_sided(&clamp.values, &sub.values)?;
    c.near("cifar10 variance ratio", 5.90, 0.01, f.statistic);
    c.near("cifar10 F-test p", 0.003, 0.001, f.p_value);
    let w = welch_t_test(&clamp.values, &sub.values)?;
    c.near("cifar10 Welch |t|", 0.10, 0.02, w.test.statistic.abs());
    c.near("cifar10 Welch p", 0.92, 0.02, w.test.p_value);
    c.info("cifar10 Welch dof", 19.4, w.test.dof[0]);
    let ci = bootstrap_vr_ci(&clamp.values, &sub.values, 10_000, bootstrap_seed)?;
    c.within("cifar10 bootstrap VR CI low", 1.3, 2.0, ci.low);
    c.within("cifar10 bootstrap VR CI high", 12.0, 20.0, ci.high);

    let table = super::factorial_table(&cells).ok_or_else(|| Error::Invalid("cifar10 fixture is not 2×2".into()))?;
    for (center, name, want) in [
        (Center::Mean, "Levene", [0.061, 0.824, 0.058]),
        (Center::Median, "Brown-Forsythe", [0.058, 0.856, 0.137]),
    ] {
        let l = levene_factorial(&table, center)?;
        c.near(&format!("cifar10 {name} p (margin)"), want[0], 0.02, l.factor_a.p_value);
        c.near(&format!("cifar10 {name} p (stability)"), want[1], 0.02, l.factor_b.p_value);
        c.near(&format!("cifar10 {name} p (cells)"), want[2], 0.02, l.cells.p_value);
    }

    let sw = |g: &SeedGroup| shapiro_wilk(&g.values);
    let (w1, w2) = (sw(clamp)?, sw(sub)?);
    c.near("Shapiro-Wilk W clamp pooled", 0.9513, 0.002, w1.statistic);
    c.near("Shapiro-Wilk p clamp pooled", 0.5816, 0.02, w1.p_value);
    c.near("Shapiro-Wilk W subtract pooled", 0.9516, 0.002, w2.statistic);
    c.near("Shapiro-Wilk p subtract pooled", 0.59, 0.02, w2.p_value);

    let low_cells = groups(fixtures::CIFAR10_LOW_MARGIN, GroupBy::Cell)?;
    let low_clamp = SeedGroup::pooled(
        "clamp",
        &[get(&low_cells, "clamp_detach")?, get(&low_cells, "clamp_direct")?],
    );
    let low_sub = get(&low_cells, "subtract_detach")?;
    let (w3, w4) = (sw(&low_clamp)?, sw(low_sub)?);
    c.near("Shapiro-Wilk W clamp low margin", 0.9608, 0.002, w3.statistic);
    c.near("Shapiro-Wilk p clamp low margin", 0.7355, 0.02, w3.p_value);
    c.near("Shapiro-Wilk W subtract low margin", 0.9074, 0.002, w4.statistic);
    c.near("Shapiro-Wilk p subtract low margin", 0.38, 0.03, w4.p_value);
    let fl = f_test_two_sided(&low_clamp.values, &low_sub.values)?;
    c.near("low-margin variance ratio", 2.98, 0.02, fl.statistic);
    c.near("low-margin F-test p", 0.19, 0.02, fl.p_value);
    let cil = bootstrap_vr_ci(&low_clamp.values, &low_sub.values, 10_000, bootstrap_seed)?;
    c.within("low-margin bootstrap CI low (contains 1)", 0.0, 1.0, cil.low);
    c.within("low-margin bootstrap CI high (contains 1)", 1.0, f64::INFINITY, cil.high);

    for (name, text, clamp_label, sub_label, vr, tol, p) in [
        ("svhn", fixtures::SVHN, "clamp", "subtract", 0.25, 0.005, Some((0.21, 0.02))),
        ("fashion_mnist", fixtures::FASHION_MNIST, "clamp", "subtract", 0.08, 0.005, Some((0.029, 0.005))),
        ("cifar100", fixtures::CIFAR100, "clamp", "subtract", 0.39, 0.02, Some((0.17, 0.02))),
        ("svhn medium", fixtures::SVHN_SWEEP_MEDIUM, "clamp", "subtract", 2.18, 0.05, None),
        ("svhn hard", fixtures::SVHN_SWEEP_HARD, "clamp", "subtract", 16.73, 0.05, None),
    ] {
        let g = groups(text, GroupBy::Margin)?;
        let (a, b) = (get(&g, clamp_label)?, get(&g, sub_label)?);
        let f = f_test_two_sided(&a.values, &b.values)?;
        c.near(&format!("{name} variance ratio"), vr, tol, f.statistic);
        if let Some((pv, pt)) = p {
            c.near(&format!("{name} F-test p"), pv, pt, f.p_value);
        }
    }
    Ok(ReproductionReport { checks: c.0 })
}
