use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embed::TrainConfig;
use crate::forecast::ForecastConfig;
use crate::graph::{FormatConfig, NodeType, WindowSpec};
use crate::synthgen::WorldSpec;
use crate::trajectory::SmoothOptions;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Neighborhood sizes for the overlap grid.
    pub ks: Vec<usize>,
    /// Snapshot gaps for the overlap grid.
    pub deltas: Vec<usize>,
    /// Share of eligible nodes counted as top shifters in the category mix.
    pub top_fraction: f64,
    /// Minimum total pair weight for a node to count as updated.
    pub min_pair_weight: u64,
    /// Export velocities for every timestamp instead of only the last.
    pub velocity_all: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            ks: vec![10, 50, 100],
            deltas: vec![2, 3, 4],
            top_fraction: 0.1,
            min_pair_weight: 10,
            velocity_all: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub sequence_lengths: Vec<usize>,
    pub training_lengths: Vec<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            sequence_lengths: vec![1, 3, 5, 7],
            training_lengths: vec![1, 3, 5, 7],
        }
    }
}

/// Everything a pipeline run depends on. Loaded from TOML; missing keys take
/// their defaults.
///
/// `seed` is the single source of randomness: it replaces the seeds of the
/// world, training and forecasting sections when the pipeline runs. `threads`
/// likewise sets the trainer's thread count; 1 gives the deterministic mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    pub out: PathBuf,
    /// External transaction file; the synthetic world is used when unset.
    pub input: Option<PathBuf>,
    /// Layout of `input`.
    pub format: FormatConfig,
    pub window: WindowSpec,
    pub node_type: NodeType,
    /// Pairs with a lower count are dropped after projection.
    pub min_pair_count: u64,
    pub world: WorldSpec,
    pub train: TrainConfig,
    pub analysis: AnalysisConfig,
    pub smooth: SmoothOptions,
    pub forecast: ForecastConfig,
    pub grid: GridConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            threads: 1,
            out: PathBuf::from("out"),
            input: None,
            format: FormatConfig::default(),
            window: WindowSpec::Monthly,
            node_type: NodeType::Merchant,
            min_pair_count: 1,
            world: WorldSpec::demo(),
            train: TrainConfig::default(),
            analysis: AnalysisConfig::default(),
            smooth: SmoothOptions::default(),
            forecast: ForecastConfig::default(),
            grid: GridConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("pipeline config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| e.context(path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("pipeline config: {e}")))
    }

    /// The configuration with the global seed and thread count pushed into
    /// every section.
    pub fn effective(&self) -> Self {
        let mut c = self.clone();
        c.world.rng_seed = self.seed;
        c.train.rng_seed = self.seed;
        c.forecast.rng_seed = self.seed;
        c.train.threads = self.threads;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.input.is_none() {
            self.world.validate()?;
        }
        self.train.validate()?;
        self.forecast.validate()?;
        if self.analysis.ks.contains(&0) || self.analysis.deltas.contains(&0) {
            return Err(Error::Config("analysis ks and deltas must be >= 1".into()));
        }
        if !(self.analysis.top_fraction > 0.0 && self.analysis.top_fraction <= 1.0) {
            return Err(Error::Config("analysis top_fraction must lie in (0, 1]".into()));
        }
        if self.grid.sequence_lengths.contains(&0) || self.grid.training_lengths.contains(&0) {
            return Err(Error::Config("grid lengths must be >= 1".into()));
        }
        Ok(())
    }

    /// Serialization used for the manifest hash: everything but the output
    /// location.
    pub(crate) fn hash_text(&self) -> Result<String> {
        let mut c = self.clone();
        c.out = PathBuf::new();
        c.to_toml()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn partial_file_and_unknown_keys() {
        let c = PipelineConfig::from_toml("seed = 3\n[train]\ndim = 16\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.train.dim, 16);
        assert_eq!(c.train.epochs, TrainConfig::default().epochs);
        assert!(PipelineConfig::from_toml("sed = 3\n").is_err());
    }

    #[test]
    fn seed_propagates() {
        let c = PipelineConfig {
            seed: 99,
            threads: 4,
            ..Default::default()
        }
        .effective();
        assert_eq!((c.world.rng_seed, c.train.rng_seed, c.forecast.rng_seed), (99, 99, 99));
        assert_eq!(c.train.threads, 4);
    }
}
