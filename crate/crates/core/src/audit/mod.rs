//! Seed-variance audit of a sweep manifest.

pub mod fixtures;
mod manifest;
mod reproduce;

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{
    bootstrap_vr_ci, f_test_two_sided, levene_factorial, levene_two_way_anova, shapiro_wilk, welch_t_test, BootstrapCi,
    Center, FactorialLevene, FactorialTable, SeedGroup, TestResult, TwoWayAnovaLevene, WelchResult,
};

pub use manifest::{manifest_to_string, parse_manifest, read_manifest, wide_table, write_atomic, ManifestRow};
pub use reproduce::{reproduce_published_stats, Check, Expect, ReproductionReport};

/// Condition labels are `<margin>` or `<margin>_<stability>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    Cell,
    Margin,
    Stability,
}

impl FromStr for GroupBy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cell" | "condition" => Ok(GroupBy::Cell),
            "margin" | "margin_type" => Ok(GroupBy::Margin),
            "stability" | "stability_mode" => Ok(GroupBy::Stability),
            _ => Err(Error::Invalid(format!("unknown grouping `{s}` (cell, margin, stability)"))),
        }
    }
}

fn split_condition(c: &str) -> (&str, Option<&str>) {
    match c.split_once('_') {
        Some((m, s)) => (m, Some(s)),
        None => (c, None),
    }
}

fn group_key(condition: &str, by: GroupBy) -> Result<String> {
    let (m, s) = split_condition(condition);
    Ok(match by {
        GroupBy::Cell => condition.to_string(),
        GroupBy::Margin => m.to_string(),
        GroupBy::Stability => s
            .ok_or_else(|| Error::Invalid(format!("condition `{condition}` has no stability part")))?
            .to_string(),
    })
}

/// Successful runs grouped by label, labels sorted, seeds in row order.
pub fn group_rows(rows: &[ManifestRow], by: GroupBy) -> Result<Vec<SeedGroup>> {
    let mut groups: Vec<SeedGroup> = Vec::new();
    for r in rows.iter().filter(|r| r.is_ok()) {
        let key = group_key(&r.condition, by)?;
        let acc = r.test_accuracy.expect("ok rows carry an accuracy");
        match groups.iter_mut().find(|g| g.label == key) {
            Some(g) => g.values.push(acc),
            None => groups.push(SeedGroup::new(key, vec![acc])),
        }
    }
    groups.sort_by(|a, b| a.label.cmp(&b.label));
    Ok(groups)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub label: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub variance: f64,
}

impl GroupSummary {
    pub fn of(g: &SeedGroup) -> Result<Self> {
        if g.n() < 2 {
            return Err(Error::Invalid(format!("group `{}` has {} successful seeds (need >= 2)", g.label, g.n())));
        }
        Ok(GroupSummary { label: g.label.clone(), n: g.n(), mean: g.mean()?, std: g.std()?, variance: g.variance()? })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTest {
    pub label: String,
    pub test: TestResult,
}

/// First group over second group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub group1: String,
    pub group2: String,
    pub variance_ratio: f64,
    pub f_test: TestResult,
    pub welch: WelchResult,
    pub bootstrap: BootstrapCi,
    pub shapiro: Vec<NamedTest>,
}

pub fn compare(g1: &SeedGroup, g2: &SeedGroup, resamples: usize, seed: u64) -> Result<Comparison> {
    let f_test = f_test_two_sided(&g1.values, &g2.values)?;
    let shapiro = [g1, g2]
        .into_iter()
        .filter_map(|g| shapiro_wilk(&g.values).ok().map(|test| NamedTest { label: g.label.clone(), test }))
        .collect();
    Ok(Comparison {
        group1: g1.label.clone(),
        group2: g2.label.clone(),
        variance_ratio: f_test.statistic,
        welch: welch_t_test(&g1.values, &g2.values)?,
        bootstrap: bootstrap_vr_ci(&g1.values, &g2.values, resamples, seed)?,
        f_test,
        shapiro,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorialTests {
    pub table: FactorialTable,
    pub levene: FactorialLevene,
    pub brown_forsythe: FactorialLevene,
    pub anova_levene: TwoWayAnovaLevene,
    pub anova_brown_forsythe: TwoWayAnovaLevene,
}

/// Builds the 2×2 margin × stability table when the cell labels form one.
pub fn factorial_table(cells: &[SeedGroup]) -> Option<FactorialTable> {
    if cells.len() != 4 {
        return None;
    }
    let mut margins: Vec<&str> = Vec::new();
    let mut modes: Vec<&str> = Vec::new();
    for c in cells {
        let (m, s) = split_condition(&c.label);
        let s = s?;
        if !margins.contains(&m) {
            margins.push(m);
        }
        if !modes.contains(&s) {
            modes.push(s);
        }
    }
    if margins.len() != 2 || modes.len() != 2 {
        return None;
    }
    margins.sort();
    modes.sort();
    let cell = |m: &str, s: &str| cells.iter().find(|c| c.label == format!("{m}_{s}")).cloned();
    Some(FactorialTable {
        factor_a: "margin".into(),
        factor_b: "stability".into(),
        levels_a: [margins[0].into(), margins[1].into()],
        levels_b: [modes[0].into(), modes[1].into()],
        cells: [
            [cell(margins[0], modes[0])?, cell(margins[0], modes[1])?],
            [cell(margins[1], modes[0])?, cell(margins[1], modes[1])?],
        ],
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditOptions {
    pub group_by: GroupBy,
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions { group_by: GroupBy::Margin, bootstrap_resamples: 10_000, bootstrap_seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub group_by: GroupBy,
    pub failed_runs: usize,
    pub cells: Vec<GroupSummary>,
    pub groups: Vec<GroupSummary>,
    /// Present when the grouping yields exactly two groups.
    pub comparison: Option<Comparison>,
    /// Present for a balanced 2×2 margin × stability design.
    pub factorial: Option<FactorialTests>,
    pub notes: Vec<String>,
}

pub fn audit(rows: &[ManifestRow], opts: &AuditOptions) -> Result<AuditReport> {
    if rows.is_empty() {
        return Err(Error::Invalid("manifest has no rows".into()));
    }
    let cell_groups = group_rows(rows, GroupBy::Cell)?;
    let groups = group_rows(rows, opts.group_by)?;
    let cells = cell_groups.iter().map(GroupSummary::of).collect::<Result<Vec<_>>>()?;
    let summaries = groups.iter().map(GroupSummary::of).collect::<Result<Vec<_>>>()?;
    let mut notes = Vec::new();
    let comparison = match groups.len() {
        2 => Some(compare(&groups[0], &groups[1], opts.bootstrap_resamples, opts.bootstrap_seed)?),
        n => {
            notes.push(format!("comparison omitted: {n} group(s), need exactly 2"));
            None
        }
    };
    let factorial = match factorial_table(&cell_groups) {
        Some(t) if t.is_balanced() => Some(FactorialTests {
            levene: levene_factorial(&t, Center::Mean)?,
            brown_forsythe: levene_factorial(&t, Center::Median)?,
            anova_levene: levene_two_way_anova(&t, Center::Mean)?,
            anova_brown_forsythe: levene_two_way_anova(&t, Center::Median)?,
            table: t,
        }),
        Some(_) => {
            notes.push("factorial variance tests skipped: unbalanced cells".into());
            None
        }
        None => None,
    };
    Ok(AuditReport {
        group_by: opts.group_by,
        failed_runs: rows.iter().filter(|r| !r.is_ok()).count(),
        cells,
        groups: summaries,
        comparison,
        factorial,
        notes,
    })
}

fn summary_table(out: &mut String, title: &str, rows: &[GroupSummary]) {
    let _ = writeln!(out, "{title}");
    let _ = writeln!(out, "  {:<20} {:>3} {:>9} {:>8} {:>9}", "condition", "n", "mean (%)", "std (%)", "var");
    for g in rows {
        let _ = writeln!(out, "  {:<20} {:>3} {:>9.2} {:>8.3} {:>9.4}", g.label, g.n, g.mean, g.std, g.variance);
    }
}

fn test_line(out: &mut String, name: &str, t: &TestResult) {
    let dof = t.dof.iter().map(|d| format!("{d:.2}")).collect::<Vec<_>>().join(", ");
    let _ = writeln!(out, "  {:<28} stat {:>9.4}  dof ({dof})  p {:.4}", name, t.statistic, t.p_value);
}

impl AuditReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        summary_table(&mut out, "Per-cell accuracy", &self.cells);
        if self.group_by != GroupBy::Cell {
            let _ = writeln!(out);
            summary_table(&mut out, &format!("Pooled by {:?}", self.group_by).to_lowercase(), &self.groups);
        }
        if let Some(c) = &self.comparison {
            let _ = writeln!(out, "\nVariance comparison: {} / {}", c.group1, c.group2);
            let _ = writeln!(out, "  variance ratio               {:.4}", c.variance_ratio);
            test_line(&mut out, "F-test (two-sided)", &c.f_test);
            test_line(&mut out, "Welch t-test", &c.welch.test);
            let _ = writeln!(
                out,
                "  mean difference              {:.4}  95% CI [{:.4}, {:.4}]",
                c.welch.mean_diff, c.welch.ci95.0, c.welch.ci95.1
            );
            let _ = writeln!(
                out,
                "  bootstrap VR 95% CI          [{:.3}, {:.3}]  ({} resamples, {} redraws, seed {})",
                c.bootstrap.low, c.bootstrap.high, c.bootstrap.resamples, c.bootstrap.redraws, c.bootstrap.seed
            );
            for s in &c.shapiro {
                test_line(&mut out, &format!("Shapiro-Wilk {}", s.label), &s.test);
            }
        }
        if let Some(f) = &self.factorial {
            let _ = writeln!(out, "\nFactorial variance tests (one-way on pooled levels and on cells)");
            for (name, l) in [("Levene", &f.levene), ("Brown-Forsythe", &f.brown_forsythe)] {
                test_line(&mut out, &format!("{name} margin"), &l.factor_a);
                test_line(&mut out, &format!("{name} stability"), &l.factor_b);
                test_line(&mut out, &format!("{name} cells"), &l.cells);
            }
            let _ = writeln!(out, "Two-way ANOVA on absolute deviations");
            for (name, l) in [("Levene", &f.anova_levene), ("Brown-Forsythe", &f.anova_brown_forsythe)] {
                test_line(&mut out, &format!("{name} margin"), &l.factor_a);
                test_line(&mut out, &format!("{name} stability"), &l.factor_b);
                test_line(&mut out, &format!("{name} interaction"), &l.interaction);
            }
        }
        if self.failed_runs > 0 {
            let _ = writeln!(out, "\n{} failed run(s) excluded", self.failed_runs);
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }
}
