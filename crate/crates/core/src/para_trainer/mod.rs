//! Training: a serial full-batch reference optimizer and a parallel schedule
//! with branch, temporal-slice/node-batch and layer-pipeline parallelism.

mod adam;
mod benchmark;
mod parallel;
mod pipeline;
mod serial;
mod split;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use adam::{Adam, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use benchmark::{benchmark_speedup, coordination_overhead, SpeedupRow, SpeedupTable};
pub use parallel::{
    aggregate_replicas, aggregate_replicas_weighted, node_batches, train_parallel, ReplicaSet,
    TimingReport,
};
pub use pipeline::run_pipeline;
pub use serial::train_serial;
pub use split::{split_nodes, NodeSplit, SplitFractions};

use crate::error::{Error, Result};
use crate::gae_array::{ModelConfig, TrainedModel};
use crate::objective::{LossBreakdown, LossWeights};

/// How replicas of one branch are merged at the final epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Uniform,
    /// Weighted by the number of real (unpadded) samples in each slice.
    SliceLength,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weights: LossWeights,
    /// Temporal slice length per fluctuation branch. The aging branch uses the
    /// smallest of these.
    pub window_sizes: Vec<usize>,
    /// Nodes per batch; 0 keeps the whole graph in one batch.
    #[serde(default)]
    pub node_batch_size: usize,
    pub n_workers: usize,
    pub seed: u64,
    pub split: SplitFractions,
    /// Overlap layer stages across node batches.
    #[serde(default)]
    pub pipelined: bool,
    #[serde(default)]
    pub aggregation: Aggregation,
    /// Run the parallel schedule on the calling thread.
    #[serde(default)]
    pub inline: bool,
}

impl TrainConfig {
    /// 500 epochs of Adam at 0.05, default loss weights, slices equal to the
    /// segment windows.
    pub fn reference(window_sizes: Vec<usize>) -> Self {
        Self {
            epochs: 500,
            learning_rate: 0.05,
            weights: LossWeights::reference(window_sizes.clone()),
            window_sizes,
            node_batch_size: 0,
            n_workers: 1,
            seed: 0,
            split: SplitFractions::default(),
            pipelined: false,
            aggregation: Aggregation::Uniform,
            inline: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.n_workers < 1 {
            return Err(Error::Config("n_workers must be >= 1".into()));
        }
        if self.window_sizes.iter().any(|&w| w == 0) {
            return Err(Error::Config("slice windows must be positive".into()));
        }
        self.weights.validate()?;
        self.split.validate()
    }

    pub(crate) fn check_model(&self, model: &ModelConfig, series_len: usize) -> Result<()> {
        self.validate()?;
        model.validate()?;
        if model.series_len != series_len {
            return Err(Error::shape("model series_len vs input", model.series_len, series_len));
        }
        if self.weights.segment_window.len() != model.k {
            return Err(Error::Config(format!(
                "{} segment windows for k = {}",
                self.weights.segment_window.len(),
                model.k
            )));
        }
        let max_w = self.weights.segment_window.iter().copied().max().unwrap_or(0);
        if series_len < 2 * max_w {
            return Err(Error::TooShort(format!(
                "series of {series_len} samples is shorter than twice the largest window {max_w}"
            )));
        }
        Ok(())
    }
}

/// One optimizer step of one replica (or of the whole model in serial mode).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub branch: Option<usize>,
    pub slice: Option<usize>,
    pub re: f64,
    pub mc: f64,
    pub sc: f64,
    pub sr: f64,
    pub total: f64,
}

impl StepRecord {
    pub(crate) fn whole(epoch: usize, b: &LossBreakdown) -> Self {
        Self {
            epoch,
            branch: None,
            slice: None,
            re: b.re,
            mc: b.mc,
            sc: b.sc,
            sr: b.sr,
            total: b.total,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    /// Loss over validation nodes, when there are any.
    pub validation: Option<f64>,
    pub wall_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn final_loss(&self) -> Option<&LossBreakdown> {
        self.epochs.last().map(|e| &e.loss)
    }

    /// One JSON object per step.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        for s in &self.steps {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub log: TrainLog,
    pub split: NodeSplit,
    pub timing: Option<TimingReport>,
    /// Per-branch replicas before aggregation; empty for the serial trainer.
    pub replicas: Vec<ReplicaSet>,
}
