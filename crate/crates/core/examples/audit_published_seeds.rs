//! Seed-variance audit of the bundled per-seed accuracy tables.
//!
//! cargo run --release --example audit_published_seeds -- [fixture] [margin|stability|cell]

use cfflab::audit::{audit, fixtures, parse_manifest, AuditOptions};
use cfflab::Result;

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let name = args.get(1).map(String::as_str).unwrap_or("cifar10_standard");
    let text = fixtures::by_name(name).unwrap_or_else(|| {
        let names: Vec<&str> = fixtures::ALL.iter().map(|(n, _)| *n).collect();
        panic!("unknown fixture `{name}`; choose one of {names:?}")
    });
    let opts = AuditOptions {
        group_by: args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(AuditOptions::default().group_by),
        bootstrap_seed: 2024,
        ..AuditOptions::default()
    };
    let report = audit(&parse_manifest(text)?, &opts)?;
    print!("{}", report.to_text());
    Ok(())
}
