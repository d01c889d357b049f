//! Run configuration: a TOML file with one section per library module.
//! Every field has a default, so an empty file is a valid config.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gtrend_core::fleet_graph::{DistanceMetric, GraphMode};
use gtrend_core::objective::{LossWeights, Normalization};
use gtrend_core::para_trainer::{Aggregation, SplitFractions, TrainConfig};
use gtrend_core::gae_array::ModelConfig;
use gtrend_core::workflow::TrainerKind;
use serde::{Deserialize, Serialize};

pub const RUN_FORMAT_VERSION: &str = "gtrend-run/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub format_version: String,
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataSection,
    pub fleet_graph: GraphSection,
    pub gae_array: ModelSection,
    pub objective: ObjectiveSection,
    pub para_trainer: TrainerSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub fleet: Option<PathBuf>,
    pub rdp: Option<PathBuf>,
    /// Edge list written by `build-graph`; the graph is rebuilt from the data when absent.
    pub graph: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphSection {
    pub mode: GraphMode,
    pub epsilon: f64,
    pub metric: DistanceMetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub k: usize,
    /// Samples per fluctuation period. When empty, the last `k` of the month,
    /// quarter and year periods at the data's sampling rate.
    pub window_sizes: Vec<usize>,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub n_heads: usize,
    pub leaky_slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveSection {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub normalization: Normalization,
    /// Segment length per fluctuation term; defaults to the window sizes.
    pub segment_window: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub n_workers: usize,
    pub node_batch_size: usize,
    /// Temporal slice length per fluctuation branch; defaults to the window sizes.
    pub slice_windows: Vec<usize>,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    pub pipelined: bool,
    pub aggregation: Aggregation,
    pub trainer: TrainerKind,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            format_version: RUN_FORMAT_VERSION.into(),
            seed: 0,
            out: PathBuf::from("out"),
            data: DataSection::default(),
            fleet_graph: GraphSection::default(),
            gae_array: ModelSection::default(),
            objective: ObjectiveSection::default(),
            para_trainer: TrainerSection::default(),
        }
    }
}

impl Default for GraphSection {
    fn default() -> Self {
        Self { mode: GraphMode::Spatial, epsilon: 0.5, metric: DistanceMetric::Planar }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::new(2, vec![2]);
        Self {
            k: 1,
            window_sizes: Vec::new(),
            hidden_dim: m.hidden_dim,
            latent_dim: m.latent_dim,
            n_heads: m.n_heads,
            leaky_slope: m.leaky_slope,
        }
    }
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        let w = LossWeights::reference(Vec::new());
        Self {
            lambda1: w.lambda1,
            lambda2: w.lambda2,
            lambda3: w.lambda3,
            normalization: w.normalization,
            segment_window: Vec::new(),
        }
    }
}

impl Default for TrainerSection {
    fn default() -> Self {
        let t = TrainConfig::reference(Vec::new());
        let s = SplitFractions::default();
        Self {
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            n_workers: t.n_workers,
            node_batch_size: t.node_batch_size,
            slice_windows: Vec::new(),
            split: [s.train, s.val, s.test],
            pipelined: t.pipelined,
            aggregation: t.aggregation,
            trainer: TrainerKind::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let config: Self = match path {
            None => Self::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?
            }
        };
        if config.format_version != RUN_FORMAT_VERSION {
            bail!(ConfigError(format!(
                "config format version {:?} does not match {RUN_FORMAT_VERSION:?}",
                config.format_version
            )));
        }
        for path in [&config.data.fleet, &config.data.rdp, &config.data.graph].into_iter().flatten() {
            if !path.exists() {
                bail!(ConfigError(format!("referenced path {} does not exist", path.display())));
            }
        }
        Ok(config)
    }

    /// Fluctuation periods for a series sampled `samples_per_year` times a year.
    pub fn window_sizes(&self, samples_per_year: usize) -> Result<Vec<usize>> {
        let m = &self.gae_array;
        if !m.window_sizes.is_empty() {
            if m.window_sizes.len() != m.k {
                bail!(ConfigError(format!("{} window sizes for k = {}", m.window_sizes.len(), m.k)));
            }
            return Ok(m.window_sizes.clone());
        }
        let periods = [samples_per_year / 12, samples_per_year / 4, samples_per_year];
        if m.k == 0 || m.k > periods.len() {
            bail!(ConfigError(format!("k = {} needs explicit gae_array.window_sizes", m.k)));
        }
        Ok(periods[periods.len() - m.k..].to_vec())
    }

    pub fn model(&self, series_len: usize, samples_per_year: usize) -> Result<ModelConfig> {
        let m = &self.gae_array;
        let model = ModelConfig {
            k: m.k,
            series_len,
            hidden_dim: m.hidden_dim,
            latent_dim: m.latent_dim,
            n_heads: m.n_heads,
            leaky_slope: m.leaky_slope,
            window_sizes: self.window_sizes(samples_per_year)?,
            seed: gtrend_core::seeds::sub_seed(self.seed, crate::STREAM_MODEL),
        };
        model.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(model)
    }

    pub fn train(&self, model: &ModelConfig) -> Result<TrainConfig> {
        let o = &self.objective;
        let t = &self.para_trainer;
        let or_windows = |v: &Vec<usize>| if v.is_empty() { model.window_sizes.clone() } else { v.clone() };
        let config = TrainConfig {
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            weights: LossWeights {
                lambda1: o.lambda1,
                lambda2: o.lambda2,
                lambda3: o.lambda3,
                segment_window: or_windows(&o.segment_window),
                normalization: o.normalization,
            },
            window_sizes: or_windows(&t.slice_windows),
            node_batch_size: t.node_batch_size,
            n_workers: t.n_workers,
            seed: gtrend_core::seeds::sub_seed(self.seed, crate::STREAM_TRAIN),
            split: SplitFractions { train: t.split[0], val: t.split[1], test: t.split[2] },
            pipelined: t.pipelined,
            aggregation: t.aggregation,
            inline: false,
        };
        config.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(config)
    }
}

/// A configuration problem; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!(c.gae_array.k, 1);
        assert_eq!((c.objective.lambda1, c.objective.lambda2, c.objective.lambda3), (5.0, 100.0, 10.0));
        assert_eq!(c.fleet_graph.epsilon, 0.5);
        assert_eq!(c.para_trainer.epochs, 500);
        assert_eq!(c.para_trainer.learning_rate, 0.05);
        assert_eq!(c.window_sizes(365).unwrap(), vec![365]);
    }

    #[test]
    fn empty_file_is_default_and_unknown_keys_fail() {
        let empty: RunConfig = toml::from_str("").unwrap();
        assert_eq!(empty, RunConfig::default());
        assert!(toml::from_str::<RunConfig>("[para_trainer]\nepoch = 3\n").is_err());
        assert!(toml::from_str::<RunConfig>("bogus = 1\n").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.gae_array.k = 3;
        c.para_trainer.n_workers = 4;
        let text = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), c);
        assert_eq!(c.window_sizes(365).unwrap(), vec![30, 91, 365]);
    }

    #[test]
    fn explicit_windows_must_match_k() {
        let mut c = RunConfig::default();
        c.gae_array.window_sizes = vec![7, 30];
        assert!(c.window_sizes(365).is_err());
        c.gae_array.k = 4;
        c.gae_array.window_sizes.clear();
        assert!(c.window_sizes(365).is_err());
    }
}
