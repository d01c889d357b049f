//! Fleet-level trend decomposition for long sensor timeseries.
//!
//! A fleet of nodes (e.g. PV inverters) is linked into a static graph, and an
//! array of `k + 1` graph autoencoders splits every node's series into one
//! aging trend and `k` fluctuation terms. The aging trend gives the estimated
//! degradation pattern and a global performance-loss rate.

pub mod error;
pub mod fleet_graph;
pub mod gae_array;
pub mod objective;
pub mod para_trainer;
pub mod seeds;
pub mod synth_fleet;
pub mod trend_outputs;
pub mod workflow;

pub use error::{Error, Result};
