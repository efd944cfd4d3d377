//! Factorial seed sweeps: configuration, execution with resume, and the
//! on-disk layout consumed by the audit and report commands.
//!
//! Layout under the output directory:
//!
//! ```text
//! experiment.json          resolved configuration
//! runs/<cell>_seed<S>.json one RunRecord per run
//! manifest.csv             condition,seed,test_accuracy,status
//! manifest_wide.csv        condition × S<seed> accuracy table
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audit::{manifest_to_string, wide_table, write_atomic, ManifestRow};
use crate::data::AugmentConfig;
use crate::error::{Error, Result};
use crate::loss::{MarginType, StabilityMode};
use crate::train::{run_seeded_experiment, DatasetSpec, RunRecord, RunSpec, TrainConfig};
use crate::vit::EncoderConfig;

/// Overrides `output_dir` when set.
pub const OUT_DIR_ENV: &str = "CFFLAB_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub margin_type: MarginType,
    pub stability_mode: StabilityMode,
    /// Defaults to `<margin_type>_<stability_mode>`.
    #[serde(default)]
    pub label: Option<String>,
}

impl CellSpec {
    pub fn new(margin_type: MarginType, stability_mode: StabilityMode) -> Self {
        CellSpec { margin_type, stability_mode, label: None }
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| format!("{}_{}", self.margin_type, self.stability_mode))
    }
}

/// A named profile or a full augmentation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AugmentSpec {
    Preset(String),
    Custom(AugmentConfig),
}

impl AugmentSpec {
    pub fn resolve(&self) -> Result<AugmentConfig> {
        match self {
            AugmentSpec::Preset(name) => AugmentConfig::preset(name),
            AugmentSpec::Custom(cfg) => Ok(cfg.clone()),
        }
    }
}

fn default_name() -> String {
    "experiment".into()
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

fn default_augment() -> AugmentSpec {
    AugmentSpec::Preset("synthetic".into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub cells: Vec<CellSpec>,
    pub dataset: DatasetSpec,
    #[serde(default = "default_augment")]
    pub augment: AugmentSpec,
    #[serde(default)]
    pub encoder: EncoderConfig,
    /// Margin schedule and diagnostics epochs live here too; the margin type
    /// and stability mode are taken from each cell.
    #[serde(default)]
    pub train: TrainConfig,
}

fn config_err(path: &str, reason: impl std::fmt::Display) -> Error {
    Error::Config { path: path.into(), reason: reason.to_string() }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::de::Deserializer::parse(text).map_err(|e| config_err("<document>", e))?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(&path, e.into_inner())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(config_err("seeds", "seed list is empty"));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(config_err("seeds", format!("seed {dup} listed twice")));
        }
        if self.cells.is_empty() {
            return Err(config_err("cells", "no factorial cells"));
        }
        let mut labels = HashSet::new();
        for (i, c) in self.cells.iter().enumerate() {
            let l = c.label();
            if l.is_empty() || l.contains(['/', '\\', ',']) {
                return Err(config_err(&format!("cells[{i}].label"), format!("`{l}` is not a usable label")));
            }
            if !labels.insert(l.clone()) {
                return Err(config_err(&format!("cells[{i}].label"), format!("duplicate cell label `{l}`")));
            }
        }
        self.encoder.validate().map_err(|e| config_err("encoder", e))?;
        self.train.validate().map_err(|e| config_err("train", e))?;
        let aug = self.augment.resolve().map_err(|e| config_err("augment", e))?;
        aug.validate(self.encoder.channels).map_err(|e| config_err("augment", e))?;
        Ok(())
    }

    /// Every (cell, seed) pair in cell-major order.
    pub fn run_specs(&self) -> Result<Vec<RunSpec>> {
        let augment = self.augment.resolve()?;
        let mut out = Vec::new();
        for cell in &self.cells {
            for &seed in &self.seeds {
                let mut train = self.train.clone();
                train.margin_type = cell.margin_type;
                train.stability_mode = cell.stability_mode;
                out.push(RunSpec {
                    condition: cell.label(),
                    seed,
                    encoder: self.encoder.clone(),
                    train,
                    augment: augment.clone(),
                });
            }
        }
        Ok(out)
    }
}

pub fn run_file_name(condition: &str, seed: u64) -> String {
    format!("{condition}_seed{seed}.json")
}

/// A stored record counts as complete when it parses and matches its run.
fn load_completed(path: &Path, spec: &RunSpec) -> Option<RunRecord> {
    let text = std::fs::read_to_string(path).ok()?;
    let rec: RunRecord = serde_json::from_str(&text).ok()?;
    (rec.condition == spec.condition && rec.seed == spec.seed).then_some(rec)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepSummary {
    pub out_dir: PathBuf,
    pub manifest: PathBuf,
    pub executed: usize,
    pub skipped: usize,
    pub failed: usize,
    pub records: Vec<RunRecord>,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Overrides the config and the environment.
    pub out_dir: Option<PathBuf>,
    /// Worker threads; `None` uses one per core.
    pub jobs: Option<usize>,
    /// Replaces the configured seed list.
    pub seeds: Option<Vec<u64>>,
}

pub fn resolve_out_dir(cfg: &ExperimentConfig, opts: &RunOptions) -> PathBuf {
    opts.out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| cfg.output_dir.clone())
}

pub fn manifest_rows(records: &[RunRecord]) -> Vec<ManifestRow> {
    records
        .iter()
        .map(|r| ManifestRow {
            condition: r.condition.clone(),
            seed: r.seed,
            test_accuracy: r.test_accuracy,
            status: if r.is_ok() { "ok".into() } else { "failed".into() },
        })
        .collect()
}

/// Runs every missing (cell, seed) pair, then rewrites the manifests.
pub fn cmd_run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<SweepSummary> {
    let mut cfg = cfg.clone();
    if let Some(seeds) = &opts.seeds {
        cfg.seeds = seeds.clone();
    }
    cfg.validate()?;
    let out = resolve_out_dir(&cfg, opts);
    let runs_dir = out.join("runs");
    std::fs::create_dir_all(&runs_dir).map_err(|e| Error::io(&runs_dir, e))?;
    write_atomic(&out.join("experiment.json"), serde_json::to_string_pretty(&cfg)?.as_bytes())?;

    let specs = cfg.run_specs()?;
    let done: Vec<Option<RunRecord>> =
        specs.iter().map(|s| load_completed(&runs_dir.join(run_file_name(&s.condition, s.seed)), s)).collect();
    let todo: Vec<usize> = (0..specs.len()).filter(|&i| done[i].is_none()).collect();
    let data = if todo.is_empty() { None } else { Some(cfg.dataset.load()?) };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    let fresh: Vec<(usize, RunRecord)> = pool.install(|| {
        todo.par_iter()
            .map(|&i| {
                let spec = &specs[i];
                let rec = run_seeded_experiment(spec, data.as_ref().expect("loaded when runs are pending"))?;
                let path = runs_dir.join(run_file_name(&spec.condition, spec.seed));
                write_atomic(&path, serde_json::to_string_pretty(&rec)?.as_bytes())?;
                Ok((i, rec))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let executed = fresh.len();
    let mut slots = done;
    for (i, rec) in fresh {
        slots[i] = Some(rec);
    }
    let records: Vec<RunRecord> = slots.into_iter().map(|r| r.expect("every run completed")).collect();
    let rows = manifest_rows(&records);
    let manifest = out.join("manifest.csv");
    write_atomic(&manifest, manifest_to_string(&rows)?.as_bytes())?;
    write_atomic(&out.join("manifest_wide.csv"), wide_table(&rows)?.as_bytes())?;
    Ok(SweepSummary {
        out_dir: out,
        manifest,
        executed,
        skipped: records.len() - executed,
        failed: records.iter().filter(|r| !r.is_ok()).count(),
        records,
    })
}

/// Reads every run record under `dir` (or `dir/runs`), sorted by condition
/// then seed.
pub fn load_run_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let runs = if dir.join("runs").is_dir() { dir.join("runs") } else { dir.to_path_buf() };
    let entries = std::fs::read_dir(&runs).map_err(|e| Error::io(&runs, e))?;
    let mut records = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&runs, e))?.path();
        if path.extension().is_some_and(|x| x == "json") {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let rec: RunRecord = serde_json::from_str(&text)
                .map_err(|e| Error::Malformed { offset: e.column() as u64, reason: format!("{}: {e}", path.display()) })?;
            records.push(rec);
        }
    }
    if records.is_empty() {
        return Err(Error::Invalid(format!("no run records in {}", runs.display())));
    }
    records.sort_by(|a, b| a.condition.cmp(&b.condition).then(a.seed.cmp(&b.seed)));
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seeds = [1, 2]
[[cells]]
margin_type = "clamp"
stability_mode = "detach"
[[cells]]
margin_type = "subtract"
stability_mode = "detach"
[dataset]
kind = "synthetic"
classes = 3
train_per_class = 12
test_per_class = 4
image_size = 8
noise_std = 0.3
[train]
stage1_epochs = 1
stage2_epochs = 1
batch_size = 12
val_size = 6
"#;

    #[test]
    fn shipped_configs_parse() {
        for text in [include_str!("../configs/desk_sweep.toml"), include_str!("../configs/cifar10_full.toml")] {
            ExperimentConfig::from_toml_str(text).unwrap();
        }
    }

    #[test]
    fn minimal_config_parses() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.cells[1].label(), "subtract_detach");
        assert_eq!(cfg.train.tau, 0.15);
        assert_eq!(cfg.encoder, EncoderConfig::default());
        let specs = cfg.run_specs().unwrap();
        assert_eq!(specs.len(), 4);
        assert_eq!((specs[2].condition.as_str(), specs[2].seed), ("subtract_detach", 1));
        assert_eq!(specs[2].train.margin_type, MarginType::Subtract);
    }

    #[test]
    fn errors_name_the_field() {
        let bad = MINIMAL.replace("batch_size = 12", "batch_size = \"twelve\"");
        match ExperimentConfig::from_toml_str(&bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "train.batch_size"),
            other => panic!("{other:?}"),
        }
        let unknown = MINIMAL.replace("val_size = 6", "val_size = 6\nwarmup = 3");
        assert!(matches!(ExperimentConfig::from_toml_str(&unknown), Err(Error::Config { .. })));
        let empty = MINIMAL.replace("seeds = [1, 2]", "seeds = []");
        match ExperimentConfig::from_toml_str(&empty) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "seeds"),
            other => panic!("{other:?}"),
        }
        let dup = MINIMAL.replace("margin_type = \"subtract\"", "margin_type = \"clamp\"");
        match ExperimentConfig::from_toml_str(&dup) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "cells[1].label"),
            other => panic!("{other:?}"),
        }
        let zero = MINIMAL.replace("stage1_epochs = 1", "stage1_epochs = 0");
        match ExperimentConfig::from_toml_str(&zero) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "train"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn run_writes_records_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let opts = RunOptions { out_dir: Some(dir.path().to_path_buf()), jobs: Some(2), seeds: None };
        let first = cmd_run(&cfg, &opts).unwrap();
        assert_eq!((first.executed, first.skipped), (4, 0));
        assert_eq!(std::fs::read_dir(dir.path().join("runs")).unwrap().count(), 4);
        let manifest = std::fs::read_to_string(&first.manifest).unwrap();
        assert_eq!(manifest.lines().count(), 5);

        std::fs::remove_file(dir.path().join("runs").join(run_file_name("clamp_detach", 2))).unwrap();
        let second = cmd_run(&cfg, &opts).unwrap();
        assert_eq!((second.executed, second.skipped), (1, 3));
        assert_eq!(std::fs::read_to_string(&second.manifest).unwrap(), manifest);
        assert_eq!(load_run_records(dir.path()).unwrap(), first.records);
    }
}
