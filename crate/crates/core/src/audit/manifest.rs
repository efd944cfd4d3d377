//! Sweep manifests: one `condition,seed,test_accuracy,status` row per run.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub condition: String,
    pub seed: u64,
    /// Empty for failed runs.
    pub test_accuracy: Option<f64>,
    pub status: String,
}

impl ManifestRow {
    pub fn ok(condition: impl Into<String>, seed: u64, acc: f64) -> Self {
        ManifestRow { condition: condition.into(), seed, test_accuracy: Some(acc), status: "ok".into() }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok" && self.test_accuracy.is_some()
    }
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let rows = rdr.deserialize().collect::<std::result::Result<Vec<ManifestRow>, _>>()?;
    if let Some(r) = rows.iter().find(|r| r.test_accuracy.is_some_and(|a| !(0.0..=100.0).contains(&a))) {
        return Err(Error::Invalid(format!("{} seed {}: accuracy {:?} outside [0, 100]", r.condition, r.seed, r.test_accuracy)));
    }
    Ok(rows)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}

pub fn manifest_to_string(rows: &[ManifestRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Condition rows × seed columns (`S<seed>`), blank where a run is missing
/// or failed.
pub fn wide_table(rows: &[ManifestRow]) -> Result<String> {
    let seeds: BTreeSet<u64> = rows.iter().map(|r| r.seed).collect();
    let mut by_cond: BTreeMap<&str, BTreeMap<u64, f64>> = BTreeMap::new();
    for r in rows {
        let entry = by_cond.entry(&r.condition).or_default();
        if let Some(a) = r.test_accuracy.filter(|_| r.is_ok()) {
            entry.insert(r.seed, a);
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["condition".to_string()];
    header.extend(seeds.iter().map(|s| format!("S{s}")));
    w.write_record(&header)?;
    for (cond, vals) in by_cond {
        let mut rec = vec![cond.to_string()];
        rec.extend(seeds.iter().map(|s| vals.get(s).map(|a| a.to_string()).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let name = path.file_name().ok_or_else(|| Error::Invalid(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(contents).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
