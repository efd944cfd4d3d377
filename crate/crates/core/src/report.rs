//! CSV tables and standalone SVG figures from run records.
//!
//! Every chart uses a 640×400 canvas with a 60 px margin on all sides. Data
//! coordinates map linearly onto the plot rectangle, y growing upward.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::audit::{manifest_to_string, write_atomic};
use crate::error::{Error, Result};
use crate::experiment::manifest_rows;
use crate::stats::{mean, sample_variance};
use crate::train::RunRecord;

pub const WIDTH: f64 = 640.0;
pub const HEIGHT: f64 = 400.0;
pub const MARGIN: f64 = 60.0;

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Linear map from `[lo, hi]` onto `[a, b]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub a: f64,
    pub b: f64,
}

impl Axis {
    fn padded(values: impl Iterator<Item = f64>, a: f64, b: f64) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        let pad = if hi > lo { 0.08 * (hi - lo) } else { 0.5 };
        Axis { lo: lo - pad, hi: hi + pad, a, b }
    }

    pub fn map(&self, v: f64) -> f64 {
        self.a + (v - self.lo) / (self.hi - self.lo) * (self.b - self.a)
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(title: &str) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    let _ = writeln!(s, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(s, "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>", WIDTH / 2.0, esc(title));
    s
}

fn frame(s: &mut String, y: &Axis, ylabel: &str) {
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(s, "<path d=\"M{l},{t} L{l},{b} L{r},{b}\" fill=\"none\" stroke=\"black\"/>");
    for i in 0..=4 {
        let v = y.lo + (y.hi - y.lo) * i as f64 / 4.0;
        let py = y.map(v);
        let _ = writeln!(s, "<line x1=\"{}\" y1=\"{py:.2}\" x2=\"{l}\" y2=\"{py:.2}\" stroke=\"black\"/>", l - 4.0);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{v:.3}</text>", l - 6.0, py + 4.0);
    }
    let _ = writeln!(
        s,
        "<text transform=\"translate(16,{}) rotate(-90)\" text-anchor=\"middle\">{}</text>",
        HEIGHT / 2.0,
        esc(ylabel)
    );
}

/// Per-seed dot plot: one circle per value, a mean line and a ±1 std band
/// per group. Horizontal jitter is a fixed pattern, not random.
pub fn dot_plot_svg(groups: &[(String, Vec<f64>)], title: &str, ylabel: &str) -> Result<String> {
    if groups.is_empty() {
        return Err(Error::Invalid("dot plot needs at least one group".into()));
    }
    let y = Axis::padded(groups.iter().flat_map(|(_, v)| v.iter().copied()), HEIGHT - MARGIN, MARGIN);
    let slot = (WIDTH - 2.0 * MARGIN) / groups.len() as f64;
    let mut s = header(title);
    frame(&mut s, &y, ylabel);
    for (gi, (label, values)) in groups.iter().enumerate() {
        let cx = MARGIN + slot * (gi as f64 + 0.5);
        let color = COLORS[gi % COLORS.len()];
        if values.len() >= 2 {
            let m = mean(values)?;
            let sd = sample_variance(values)?.sqrt();
            let (top, bot) = (y.map(m + sd), y.map(m - sd));
            let _ = writeln!(
                s,
                "<rect class=\"band\" x=\"{:.2}\" y=\"{top:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{color}\" fill-opacity=\"0.15\"/>",
                cx - slot * 0.35,
                slot * 0.7,
                bot - top
            );
            let _ = writeln!(
                s,
                "<line class=\"mean\" x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>",
                cx - slot * 0.35,
                y.map(m),
                cx + slot * 0.35,
                y.map(m)
            );
        }
        for (i, v) in values.iter().enumerate() {
            let jitter = ((i * 7) % 11) as f64 / 10.0 - 0.5;
            let _ = writeln!(
                s,
                "<circle class=\"seed\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{color}\" fill-opacity=\"0.8\"/>",
                cx + jitter * slot * 0.4,
                y.map(*v)
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{cx:.2}\" y=\"{}\" text-anchor=\"middle\">{} (n={})</text>",
            HEIGHT - MARGIN + 20.0,
            esc(label),
            values.len()
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// One polyline per series over x = 0, 1, …; series may differ in length.
pub fn line_chart_svg(series: &[(String, Vec<f64>)], title: &str, xlabel: &str, ylabel: &str) -> Result<String> {
    let n = series.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
    if n == 0 {
        return Err(Error::Invalid("line chart needs at least one point".into()));
    }
    let y = Axis::padded(series.iter().flat_map(|(_, v)| v.iter().copied()), HEIGHT - MARGIN, MARGIN);
    let x = Axis { lo: -0.5, hi: n as f64 - 0.5, a: MARGIN, b: WIDTH - MARGIN };
    let mut s = header(title);
    frame(&mut s, &y, ylabel);
    for i in 0..n {
        let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\">{i}</text>", x.map(i as f64), HEIGHT - MARGIN + 16.0);
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", WIDTH / 2.0, HEIGHT - 18.0, esc(xlabel));
    for (si, (label, values)) in series.iter().enumerate() {
        let color = COLORS[si % COLORS.len()];
        let pts: Vec<String> =
            values.iter().enumerate().map(|(i, v)| format!("{:.2},{:.2}", x.map(i as f64), y.map(*v))).collect();
        let _ = writeln!(
            s,
            "<polyline class=\"series\" data-label=\"{}\" points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            esc(label),
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>",
            WIDTH - MARGIN + 4.0,
            MARGIN + 14.0 * si as f64,
            esc(label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Accuracies of successful runs per condition, conditions in first-seen order.
pub fn accuracy_groups(records: &[RunRecord]) -> Vec<(String, Vec<f64>)> {
    let mut out: Vec<(String, Vec<f64>)> = Vec::new();
    for r in records {
        let Some(a) = r.test_accuracy.filter(|_| r.is_ok()) else { continue };
        match out.iter_mut().find(|(c, _)| *c == r.condition) {
            Some((_, v)) => v.push(a),
            None => out.push((r.condition.clone(), vec![a])),
        }
    }
    out
}

pub type Series = Vec<(String, Vec<f64>)>;

/// Per-condition mean over seeds of the last diagnostic snapshot: (CAR, grad norm).
pub fn diagnostic_profiles(records: &[RunRecord]) -> (Series, Series) {
    let mut car: Vec<(String, Vec<f64>, usize)> = Vec::new();
    let mut grad: Vec<(String, Vec<f64>, usize)> = Vec::new();
    for r in records.iter().filter(|r| r.is_ok()) {
        let Some(snap) = r.snapshots.last() else { continue };
        for (acc, vals) in [(&mut car, &snap.per_layer_car), (&mut grad, &snap.per_layer_grad_norm)] {
            match acc.iter_mut().find(|(c, v, _)| *c == r.condition && v.len() == vals.len()) {
                Some((_, sum, n)) => {
                    sum.iter_mut().zip(vals).for_each(|(s, v)| *s += v);
                    *n += 1;
                }
                None => acc.push((r.condition.clone(), vals.clone(), 1)),
            }
        }
    }
    let finish = |acc: Vec<(String, Vec<f64>, usize)>| {
        acc.into_iter().map(|(c, s, n)| (c, s.into_iter().map(|v| v / n as f64).collect())).collect()
    };
    (finish(car), finish(grad))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportFiles {
    pub per_seed_csv: PathBuf,
    pub dot_plot: PathBuf,
    pub diagnostics_csv: Option<PathBuf>,
    pub car_chart: Option<PathBuf>,
    pub grad_chart: Option<PathBuf>,
}

/// Writes `per_seed.csv` (manifest schema), `accuracy_by_condition.svg`
/// and, when snapshots exist, `diagnostics.csv`, `car_by_layer.svg` and
/// `grad_norm_by_layer.svg`.
pub fn write_report(records: &[RunRecord], out: &Path) -> Result<ReportFiles> {
    if records.is_empty() {
        return Err(Error::Invalid("no run records to report".into()));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let per_seed_csv = out.join("per_seed.csv");
    write_atomic(&per_seed_csv, manifest_to_string(&manifest_rows(records))?.as_bytes())?;
    let dot_plot = out.join("accuracy_by_condition.svg");
    let groups = accuracy_groups(records);
    if groups.is_empty() {
        return Err(Error::Invalid("every run failed; nothing to plot".into()));
    }
    write_atomic(&dot_plot, dot_plot_svg(&groups, "Per-seed test accuracy", "test accuracy (%)")?.as_bytes())?;

    let (car, grad) = diagnostic_profiles(records);
    let mut files = ReportFiles { per_seed_csv, dot_plot, diagnostics_csv: None, car_chart: None, grad_chart: None };
    if car.is_empty() {
        return Ok(files);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["condition", "layer", "car", "grad_norm"])?;
    for ((c, cv), (_, gv)) in car.iter().zip(&grad) {
        for (l, (a, g)) in cv.iter().zip(gv).enumerate() {
            w.write_record([c.clone(), l.to_string(), a.to_string(), g.to_string()])?;
        }
    }
    let csv_path = out.join("diagnostics.csv");
    write_atomic(&csv_path, &w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?)?;
    let car_path = out.join("car_by_layer.svg");
    write_atomic(&car_path, line_chart_svg(&car, "Clamp activation rate by layer", "layer", "CAR")?.as_bytes())?;
    let grad_path = out.join("grad_norm_by_layer.svg");
    write_atomic(&grad_path, line_chart_svg(&grad, "Gradient norm by layer", "layer", "L2 norm")?.as_bytes())?;
    files.diagnostics_csv = Some(csv_path);
    files.car_chart = Some(car_path);
    files.grad_chart = Some(grad_path);
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::{fixtures, group_rows, parse_manifest, GroupBy};

    fn count(svg: &str, needle: &str) -> usize {
        svg.matches(needle).count()
    }

    #[test]
    fn dot_plot_has_one_marker_per_seed() {
        let rows = parse_manifest(fixtures::CIFAR10_STANDARD).unwrap();
        let groups: Vec<(String, Vec<f64>)> =
            group_rows(&rows, GroupBy::Margin).unwrap().into_iter().map(|g| (g.label, g.values)).collect();
        let svg = dot_plot_svg(&groups, "t", "acc").unwrap();
        assert_eq!(count(&svg, "<circle class=\"seed\""), 28);
        assert_eq!(count(&svg, "class=\"mean\""), 2);
        assert_eq!(count(&svg, "class=\"band\""), 2);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn line_series_lengths() {
        let car: Vec<f64> = (0..8).map(|l| 0.6 - 0.04 * l as f64).collect();
        let svg = line_chart_svg(&[("clamp".into(), car.clone()), ("subtract".into(), car)], "t", "layer", "CAR").unwrap();
        let polylines: Vec<&str> = svg.lines().filter(|l| l.starts_with("<polyline")).collect();
        assert_eq!(polylines.len(), 2);
        for p in polylines {
            let pts = p.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
            assert_eq!(pts.split(' ').count(), 8);
        }
    }

    #[test]
    fn axis_maps_upward() {
        let y = Axis { lo: 0.0, hi: 10.0, a: HEIGHT - MARGIN, b: MARGIN };
        assert_eq!(y.map(0.0), HEIGHT - MARGIN);
        assert_eq!(y.map(10.0), MARGIN);
        assert_eq!(y.map(5.0), HEIGHT / 2.0);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(write_report(&[], Path::new("/nonexistent")).is_err());
        assert!(dot_plot_svg(&[], "t", "y").is_err());
        assert!(line_chart_svg(&[("a".into(), vec![])], "t", "x", "y").is_err());
    }
}
