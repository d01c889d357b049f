use std::path::Path;
use std::time::Instant;

use crossbeam_channel::unbounded;
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::parallel::{node_batches, train_parallel};
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::fleet_graph::FleetGraph;
use crate::gae_array::ModelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub workers: usize,
    pub epoch_time_s: f64,
    /// `time(1) / time(w)`.
    pub speedup: f64,
    /// `time(w) * w - time(1)`, in seconds per epoch.
    pub overhead_s: f64,
    /// Message-passing cost of the same schedule with empty payloads, seconds per epoch.
    pub dry_run_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupTable {
    pub rows: Vec<SpeedupRow>,
    pub epochs: usize,
    pub n_branches: usize,
    pub n_replicas: usize,
    pub n_node_batches: usize,
    /// Hardware threads visible to the process.
    pub available_parallelism: usize,
    pub flags: Vec<String>,
}

impl SpeedupTable {
    pub fn speedup(&self, workers: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.workers == workers).map(|r| r.speedup)
    }

    /// `workers,epoch_time_s,speedup`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["workers", "epoch_time_s", "speedup"])?;
        for r in &self.rows {
            w.write_record([
                r.workers.to_string(),
                format!("{:.6}", r.epoch_time_s),
                format!("{:.4}", r.speedup),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Wall-clock time of the coordinator/worker message schedule alone: per
/// epoch one forward request per worker, one output and one residual per
/// replica, with no payload and no compute. Seconds per epoch.
pub fn coordination_overhead(n_replicas: usize, n_workers: usize, epochs: usize) -> f64 {
    let n_workers = n_workers.max(1);
    let owned: Vec<usize> = (0..n_workers)
        .map(|w| (0..n_replicas).filter(|u| u % n_workers == w).count())
        .collect();
    let start = Instant::now();
    std::thread::scope(|scope| {
        let (reply_tx, reply_rx) = unbounded::<usize>();
        let mut senders = Vec::with_capacity(n_workers);
        for &count in &owned {
            let (tx, rx) = unbounded::<Option<usize>>();
            senders.push(tx);
            let reply_tx = reply_tx.clone();
            scope.spawn(move || {
                for msg in rx {
                    if msg.is_none() {
                        for u in 0..count {
                            let _ = reply_tx.send(u);
                        }
                    }
                }
            });
        }
        drop(reply_tx);
        for _ in 0..epochs {
            for tx in &senders {
                tx.send(None).expect("worker alive");
            }
            for _ in 0..n_replicas {
                reply_rx.recv().expect("worker alive");
            }
            for u in 0..n_replicas {
                senders[u % n_workers].send(Some(u)).expect("worker alive");
            }
        }
    });
    start.elapsed().as_secs_f64() / epochs.max(1) as f64
}

/// Trains the same schedule (fixed seed, fixed epochs) once per worker count.
pub fn benchmark_speedup(
    x: ArrayView2<f64>,
    graph: &FleetGraph,
    model: &ModelConfig,
    config: &TrainConfig,
    worker_counts: &[usize],
) -> Result<SpeedupTable> {
    if worker_counts.first() != Some(&1) || worker_counts.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::Config(format!(
            "worker counts must be strictly ascending from 1, got {worker_counts:?}"
        )));
    }
    let mut rows: Vec<SpeedupRow> = Vec::with_capacity(worker_counts.len());
    let mut n_replicas = 0;
    for &w in worker_counts {
        let run = TrainConfig { n_workers: w, inline: false, ..config.clone() };
        let timing = train_parallel(x, graph, model, &run)?
            .timing
            .expect("parallel trainer reports timing");
        n_replicas = timing.n_replicas;
        let base = rows.first().map_or(timing.mean_epoch_time_s, |r| r.epoch_time_s);
        rows.push(SpeedupRow {
            workers: w,
            epoch_time_s: timing.mean_epoch_time_s,
            speedup: base / timing.mean_epoch_time_s,
            overhead_s: timing.mean_epoch_time_s * w as f64 - base,
            dry_run_s: coordination_overhead(timing.n_replicas, w, config.epochs),
        });
    }
    let n_branches = model.n_branches();
    let n_node_batches = node_batches(x.nrows(), config.node_batch_size).len();
    let available_parallelism = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut flags = Vec::new();
    for &w in worker_counts {
        if w > n_branches * n_node_batches {
            flags.push(format!(
                "{w} workers exceed {n_branches} branches x {n_node_batches} node batches; no further branch-level gain"
            ));
        }
        if w > available_parallelism {
            flags.push(format!("{w} workers exceed {available_parallelism} available hardware threads"));
        }
    }
    Ok(SpeedupTable {
        rows,
        epochs: config.epochs,
        n_branches,
        n_replicas,
        n_node_batches,
        available_parallelism,
        flags,
    })
}
