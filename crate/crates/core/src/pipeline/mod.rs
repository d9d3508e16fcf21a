//! File-based pipeline stages with content-hashed manifests.
//!
//! Every stage reads its inputs from, and writes its outputs under, one
//! output directory:
//!
//! | stage | writes |
//! |---|---|
//! | `gen` | `data/transactions.csv`, `data/world.toml`, `data/ground_truth.json` |
//! | `ingest` | `ingest/records.csv`, `ingest/errors.csv`, `ingest/categories.csv` |
//! | `project` | `pairs/windows.csv`, `pairs/window_NNN.tsv` (+ `.meta`) |
//! | `train` | `embeddings/snapshot_NNN.txt` |
//! | `shift` | `shift/*.csv` |
//! | `neighborhoods` | `neighborhoods/overlap.csv` |
//! | `smooth` | `smoothed/snapshot_NNN.txt`, `smoothed/passthrough.txt`, `smoothed/noise.csv` |
//! | `velocity` | `velocity/velocity.csv` |
//! | `forecast` | `forecast/grid.csv`, `forecast/models/*.txt` |
//! | `report` | `report/report.md` |
//!
//! plus `manifests/<stage>.json` listing input and output hashes. A stage
//! clears its own directory before writing, so reruns leave no stale files.

mod config;
mod manifest;
mod report;
mod stages;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub use config::{AnalysisConfig, GridConfig, PipelineConfig};
pub use manifest::{read_manifest, sha256_file, FileHash, Manifest};

use crate::{par, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Gen,
    Ingest,
    Project,
    Train,
    Shift,
    Neighborhoods,
    Smooth,
    Velocity,
    Forecast,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Gen,
        Stage::Ingest,
        Stage::Project,
        Stage::Train,
        Stage::Shift,
        Stage::Neighborhoods,
        Stage::Smooth,
        Stage::Velocity,
        Stage::Forecast,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Gen => "gen",
            Stage::Ingest => "ingest",
            Stage::Project => "project",
            Stage::Train => "train",
            Stage::Shift => "shift",
            Stage::Neighborhoods => "neighborhoods",
            Stage::Smooth => "smooth",
            Stage::Velocity => "velocity",
            Stage::Forecast => "forecast",
            Stage::Report => "report",
        }
    }

    /// The directory this stage owns under the output root.
    pub fn dir(self) -> &'static str {
        match self {
            Stage::Gen => "data",
            Stage::Project => "pairs",
            Stage::Train => "embeddings",
            Stage::Smooth => "smoothed",
            other => other.name(),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Stage::ALL.iter().map(|s| s.name()).collect();
                Error::Config(format!("unknown stage `{s}`; expected one of {}", names.join(", ")))
            })
    }
}

/// Run one stage and write its manifest.
pub fn run_stage(stage: Stage, cfg: &PipelineConfig) -> Result<Manifest> {
    let cfg = cfg.effective();
    cfg.validate()?;
    par::with_threads(cfg.threads, || run_stage_inner(stage, &cfg))
}

fn run_stage_inner(stage: Stage, cfg: &PipelineConfig) -> Result<Manifest> {
    let out = cfg.out.as_path();
    let dir = out.join(stage.dir());
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    log::info!("stage {stage}: start");
    let files = stages::run(stage, cfg).map_err(|e| e.context(format!("stage `{stage}`")))?;
    let manifest = Manifest::build(stage, cfg, out, &files.inputs, &files.outputs)?;
    manifest.write(out)?;
    log::info!("stage {stage}: {} outputs", manifest.outputs.len());
    Ok(manifest)
}

/// The stages `run_all` executes: everything, minus `gen` when the
/// configuration names an external input file.
pub fn planned_stages(cfg: &PipelineConfig) -> Vec<Stage> {
    Stage::ALL
        .into_iter()
        .filter(|s| *s != Stage::Gen || cfg.input.is_none())
        .collect()
}

/// Run every stage in dependency order, stopping at the first failure.
pub fn run_all(cfg: &PipelineConfig) -> Result<Vec<Manifest>> {
    planned_stages(cfg).into_iter().map(|s| run_stage(s, cfg)).collect()
}

/// Stage-relative path helper shared by the stage implementations.
pub(crate) fn rel(out: &Path, path: &Path) -> PathBuf {
    path.strip_prefix(out).map(Path::to_path_buf).unwrap_or_else(|_| path.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!(matches!("bogus".parse::<Stage>(), Err(Error::Config(_))));
    }

    #[test]
    fn external_input_skips_gen() {
        let mut cfg = PipelineConfig::default();
        assert_eq!(planned_stages(&cfg)[0], Stage::Gen);
        cfg.input = Some("tx.csv".into());
        assert_eq!(planned_stages(&cfg)[0], Stage::Ingest);
    }
}
