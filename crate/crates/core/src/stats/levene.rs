//! Levene-type tests for equality of variances.
//!
//! Observations are replaced by absolute deviations from their group
//! centre (mean for Levene, median for Brown–Forsythe) and an ANOVA is run
//! on the deviations.

use serde::{Deserialize, Serialize};

use super::{f_sf, mean, median, SeedGroup, TestResult};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Center {
    Mean,
    Median,
}

impl Center {
    fn of(self, values: &[f64]) -> Result<f64> {
        match self {
            Center::Mean => mean(values),
            Center::Median => median(values),
        }
    }

    fn method(self) -> &'static str {
        match self {
            Center::Mean => "Levene",
            Center::Median => "Brown-Forsythe",
        }
    }
}

fn abs_dev(values: &[f64], center: Center) -> Result<Vec<f64>> {
    let c = center.of(values)?;
    Ok(values.iter().map(|x| (x - c).abs()).collect())
}

/// One-way ANOVA F on already-transformed groups.
fn anova_one_way(groups: &[Vec<f64>]) -> (f64, f64, f64, f64) {
    let k = groups.len();
    let n: usize = groups.iter().map(Vec::len).sum();
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for g in groups {
        let m = g.iter().sum::<f64>() / g.len() as f64;
        ssb += g.len() as f64 * (m - grand).powi(2);
        ssw += g.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    }
    let (d1, d2) = ((k - 1) as f64, (n - k) as f64);
    (ssb / d1, ssw / d2, d1, d2)
}

fn f_result(method: String, ms_effect: f64, ms_error: f64, d1: f64, d2: f64) -> TestResult {
    // no spread in the deviations at all: nothing to reject
    let (f, p) = if ms_error == 0.0 {
        if ms_effect == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY, 0.0)
        }
    } else {
        let f = ms_effect / ms_error;
        (f, f_sf(f, d1, d2))
    };
    TestResult { method, statistic: f, dof: vec![d1, d2], p_value: p }
}

/// Classical k-group Levene / Brown–Forsythe test.
pub fn levene_one_way(groups: &[&[f64]], center: Center) -> Result<TestResult> {
    if groups.len() < 2 {
        return Err(Error::Invalid("Levene needs at least two groups".into()));
    }
    if let Some(g) = groups.iter().find(|g| g.len() < 2) {
        return Err(Error::Invalid(format!("Levene group of size {} (need >= 2)", g.len())));
    }
    let devs = groups.iter().map(|g| abs_dev(g, center)).collect::<Result<Vec<_>>>()?;
    let (msb, msw, d1, d2) = anova_one_way(&devs);
    Ok(f_result(center.method().into(), msb, msw, d1, d2))
}

/// 2×2 factorial layout: rows are levels of factor A, columns of factor B.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorialTable {
    pub factor_a: String,
    pub factor_b: String,
    pub levels_a: [String; 2],
    pub levels_b: [String; 2],
    pub cells: [[SeedGroup; 2]; 2],
}

impl FactorialTable {
    pub fn is_balanced(&self) -> bool {
        let n = self.cells[0][0].n();
        self.cells.iter().flatten().all(|c| c.n() == n)
    }

    pub fn pooled_a(&self, i: usize) -> SeedGroup {
        SeedGroup::pooled(self.levels_a[i].clone(), &[&self.cells[i][0], &self.cells[i][1]])
    }

    pub fn pooled_b(&self, j: usize) -> SeedGroup {
        SeedGroup::pooled(self.levels_b[j].clone(), &[&self.cells[0][j], &self.cells[1][j]])
    }

    fn check(&self) -> Result<()> {
        if let Some(c) = self.cells.iter().flatten().find(|c| c.n() < 2) {
            return Err(Error::Invalid(format!("cell `{}` has {} values (need >= 2)", c.label, c.n())));
        }
        Ok(())
    }
}

/// Marginal and all-cells Levene tests on a 2×2 table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorialLevene {
    /// Two groups: each level of factor A pooled over factor B.
    pub factor_a: TestResult,
    /// Two groups: each level of factor B pooled over factor A.
    pub factor_b: TestResult,
    /// Four groups: one per cell.
    pub cells: TestResult,
}

/// Variance-homogeneity tests on a factorial table, each a one-way test
/// with deviations taken from the centre of the group being compared.
pub fn levene_factorial(table: &FactorialTable, center: Center) -> Result<FactorialLevene> {
    table.check()?;
    let (a0, a1) = (table.pooled_a(0), table.pooled_a(1));
    let (b0, b1) = (table.pooled_b(0), table.pooled_b(1));
    let cells: Vec<&[f64]> = table.cells.iter().flatten().map(|c| c.values.as_slice()).collect();
    Ok(FactorialLevene {
        factor_a: levene_one_way(&[&a0.values, &a1.values], center)?,
        factor_b: levene_one_way(&[&b0.values, &b1.values], center)?,
        cells: levene_one_way(&cells, center)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoWayAnovaLevene {
    pub factor_a: TestResult,
    pub factor_b: TestResult,
    pub interaction: TestResult,
}

/// Balanced two-way ANOVA with interaction on `|x − cell centre|`.
#[allow(clippy::needless_range_loop)]
pub fn levene_two_way_anova(table: &FactorialTable, center: Center) -> Result<TwoWayAnovaLevene> {
    table.check()?;
    if !table.is_balanced() {
        return Err(Error::Invalid("two-way ANOVA Levene needs a balanced table".into()));
    }
    let n = table.cells[0][0].n();
    let mut dev = [[Vec::new(), Vec::new()], [Vec::new(), Vec::new()]];
    for i in 0..2 {
        for j in 0..2 {
            dev[i][j] = abs_dev(&table.cells[i][j].values, center)?;
        }
    }
    let cell_mean = |i: usize, j: usize| dev[i][j].iter().sum::<f64>() / n as f64;
    let grand = (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| cell_mean(i, j)).sum::<f64>() / 4.0;
    let a_mean = |i: usize| 0.5 * (cell_mean(i, 0) + cell_mean(i, 1));
    let b_mean = |j: usize| 0.5 * (cell_mean(0, j) + cell_mean(1, j));
    let nf = n as f64;
    let ss_a = 2.0 * nf * (0..2).map(|i| (a_mean(i) - grand).powi(2)).sum::<f64>();
    let ss_b = 2.0 * nf * (0..2).map(|j| (b_mean(j) - grand).powi(2)).sum::<f64>();
    let mut ss_ab = 0.0;
    let mut ss_e = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let m = cell_mean(i, j);
            ss_ab += nf * (m - a_mean(i) - b_mean(j) + grand).powi(2);
            ss_e += dev[i][j].iter().map(|x| (x - m).powi(2)).sum::<f64>();
        }
    }
    let df_e = 4.0 * (nf - 1.0);
    let ms_e = ss_e / df_e;
    let name = format!("{} (two-way ANOVA)", center.method());
    Ok(TwoWayAnovaLevene {
        factor_a: f_result(name.clone(), ss_a, ms_e, 1.0, df_e),
        factor_b: f_result(name.clone(), ss_b, ms_e, 1.0, df_e),
        interaction: f_result(name, ss_ab, ms_e, 1.0, df_e),
    })
}
