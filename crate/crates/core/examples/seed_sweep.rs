//! A complete two-cell, three-seed sweep on synthetic data: train, audit
//! and write figures.
//!
//! cargo run --release --example seed_sweep -- [output dir]

use std::path::PathBuf;
use std::time::Instant;

use cfflab::audit::{audit, read_manifest, AuditOptions};
use cfflab::experiment::{cmd_run, load_run_records, ExperimentConfig, RunOptions};
use cfflab::report::write_report;
use cfflab::Result;

fn main() -> Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("cfflab-sweep"));
    let cfg = ExperimentConfig::from_toml_str(include_str!("../configs/desk_sweep.toml"))?;
    let t = Instant::now();
    let sweep = cmd_run(&cfg, &RunOptions { out_dir: Some(out.clone()), jobs: None, seeds: None })?;
    println!("{} runs executed, {} resumed in {:.1?}", sweep.executed, sweep.skipped, t.elapsed());
    for r in &sweep.records {
        println!("  {:<16} seed {}  {:?}  acc {:?}", r.condition, r.seed, r.status, r.test_accuracy);
    }
    let report = audit(&read_manifest(&sweep.manifest)?, &AuditOptions::default())?;
    print!("\n{}", report.to_text());
    let files = write_report(&load_run_records(&out)?, &out.join("report"))?;
    println!("\nfigures: {} {:?} {:?}", files.dot_plot.display(), files.car_chart, files.grad_chart);
    Ok(())
}
