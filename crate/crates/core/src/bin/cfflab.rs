use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cfflab::audit::{audit, read_manifest, reproduce_published_stats, write_atomic, AuditOptions, GroupBy};
use cfflab::experiment::{cmd_run, load_run_records, ExperimentConfig, RunOptions};
use cfflab::report::write_report;
use cfflab::Error;

const EXIT_OTHER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUN: u8 = 3;
const EXIT_REPRODUCE: u8 = 4;

#[derive(Parser)]
#[command(name = "cfflab", version, about = "Layer-local contrastive training sweeps and seed-variance audits")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every (cell, seed) pair of an experiment, skipping finished runs.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config and CFFLAB_OUT).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Parallel runs; defaults to one per core.
        #[arg(long)]
        jobs: Option<usize>,
        /// Comma-separated seeds replacing the configured list.
        #[arg(long, value_delimiter = ',')]
        seed_list: Option<Vec<u64>>,
    },
    /// Seed-variance statistics for a manifest CSV.
    Audit {
        manifest: PathBuf,
        #[arg(long, default_value = "margin")]
        group_by: GroupBy,
        /// Directory for audit.json and audit.txt.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        resamples: usize,
        #[arg(long, default_value_t = 0)]
        bootstrap_seed: u64,
    },
    /// Recompute the published statistics from the bundled per-seed tables.
    ReproducePaperStats {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 2024)]
        bootstrap_seed: u64,
    },
    /// CSV and SVG figures from a run directory.
    Report {
        run_dir: PathBuf,
        /// Defaults to `<run_dir>/report`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn fail(e: Error, code: u8) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(code)
}

fn save(dir: &Option<PathBuf>, name: &str, contents: &str) -> cfflab::Result<()> {
    if let Some(d) = dir {
        std::fs::create_dir_all(d).map_err(|e| Error::Invalid(format!("{}: {e}", d.display())))?;
        write_atomic(&d.join(name), contents.as_bytes())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::Run { config, out, jobs, seed_list } => {
            let cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return fail(e, EXIT_CONFIG),
            };
            match cmd_run(&cfg, &RunOptions { out_dir: out, jobs, seeds: seed_list }) {
                Ok(s) => {
                    println!(
                        "{} runs executed, {} resumed, {} failed; manifest {}",
                        s.executed,
                        s.skipped,
                        s.failed,
                        s.manifest.display()
                    );
                    if s.failed > 0 {
                        ExitCode::from(EXIT_RUN)
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(e @ Error::Config { .. }) => fail(e, EXIT_CONFIG),
                Err(e) => fail(e, EXIT_RUN),
            }
        }
        Cmd::Audit { manifest, group_by, out, resamples, bootstrap_seed } => {
            let opts = AuditOptions { group_by, bootstrap_resamples: resamples, bootstrap_seed };
            let result = read_manifest(&manifest).and_then(|rows| audit(&rows, &opts)).and_then(|r| {
                let text = r.to_text();
                save(&out, "audit.json", &serde_json::to_string_pretty(&r)?)?;
                save(&out, "audit.txt", &text)?;
                Ok(text)
            });
            match result {
                Ok(text) => {
                    print!("{text}");
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e, EXIT_OTHER),
            }
        }
        Cmd::ReproducePaperStats { out, bootstrap_seed } => {
            let result = reproduce_published_stats(bootstrap_seed).and_then(|r| {
                save(&out, "reproduction.json", &serde_json::to_string_pretty(&r)?)?;
                Ok(r)
            });
            match result {
                Ok(r) => {
                    print!("{}", r.to_text());
                    if r.all_pass() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(EXIT_REPRODUCE)
                    }
                }
                Err(e) => fail(e, EXIT_REPRODUCE),
            }
        }
        Cmd::Report { run_dir, out } => {
            let out = out.unwrap_or_else(|| run_dir.join("report"));
            match load_run_records(&run_dir).and_then(|r| write_report(&r, &out)) {
                Ok(files) => {
                    let extra = [files.diagnostics_csv, files.car_chart, files.grad_chart];
                    for p in [files.per_seed_csv, files.dot_plot].into_iter().chain(extra.into_iter().flatten()) {
                        println!("wrote {}", p.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e, EXIT_OTHER),
            }
        }
    }
}
