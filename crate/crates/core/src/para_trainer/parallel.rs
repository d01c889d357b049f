//! Coordinator/worker schedule.
//!
//! Every branch is cut into contiguous temporal slices; each slice is trained
//! by its own replica of the branch. Replicas are spread over workers. Per
//! epoch the coordinator asks every worker for its replica outputs
//! (`Output`), sums them into the reconstruction, and ships each replica its
//! slice of the residual (`Residual`). Workers backpropagate the residual plus
//! their local regularizer gradient and take an Adam step. Replicas of a
//! branch are merged only after the last epoch.

use std::collections::VecDeque;
use std::ops::Range;
use std::time::Instant;

use crossbeam_channel::{unbounded, Receiver, Sender};
use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::pipeline::{run_pipeline, run_sequential};
use super::split::split_nodes;
use super::{Aggregation, EpochRecord, StepRecord, TrainConfig, TrainLog, TrainOutcome};
use crate::error::{Error, Result};
use crate::fleet_graph::FleetGraph;
use crate::gae_array::{
    init_branch, padded_slice, slice_ranges, stage_backward, stage_forward, BranchParams,
    Decomposition, LayerCache, LayerSettings, ModelConfig, Stage, TrainedModel,
};
use crate::objective::{mc_term, sc_term, sr_term, total_loss_masked, LossBreakdown, Normalization};
use crate::seeds::sub_seed;

/// All replicas of one branch, in slice order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaSet {
    pub branch_id: usize,
    pub replicas: Vec<BranchParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub workers: usize,
    pub epoch_times_s: Vec<f64>,
    pub mean_epoch_time_s: f64,
    pub total_s: f64,
    /// Coordinator time spent waiting for replica outputs.
    pub wait_s: f64,
    /// Coordinator time spent assembling outputs and residuals.
    pub assemble_s: f64,
    pub n_replicas: usize,
    pub n_node_batches: usize,
    pub messages: usize,
}

impl TimingReport {
    /// `workers,epoch_time_s,speedup`; speedup is left empty without a
    /// single-worker baseline.
    pub fn write_csv(&self, path: &std::path::Path, speedup: Option<f64>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["workers", "epoch_time_s", "speedup"])?;
        w.write_record([
            self.workers.to_string(),
            format!("{:.6}", self.mean_epoch_time_s),
            speedup.map(|s| format!("{s:.4}")).unwrap_or_default(),
        ])?;
        w.flush()?;
        Ok(())
    }
}

/// Contiguous blocks of `batch_size` node indices; one block when 0.
pub fn node_batches(n_nodes: usize, batch_size: usize) -> Vec<Vec<usize>> {
    if batch_size == 0 || batch_size >= n_nodes {
        return vec![(0..n_nodes).collect()];
    }
    (0..n_nodes)
        .collect::<Vec<_>>()
        .chunks(batch_size)
        .map(<[usize]>::to_vec)
        .collect()
}

fn check_replicas(replicas: &[BranchParams]) -> Result<()> {
    let first = replicas
        .first()
        .ok_or_else(|| Error::InvalidInput("no replicas to aggregate".into()))?;
    if let Some((i, _)) = replicas.iter().enumerate().find(|(_, r)| !r.same_shape(first)) {
        return Err(Error::shape("replica", "shape of replica 0", format!("replica {i} differs")));
    }
    Ok(())
}

/// Elementwise mean. Values are summed in sorted order so the result does not
/// depend on replica order.
pub fn aggregate_replicas(replicas: &[BranchParams]) -> Result<BranchParams> {
    aggregate_replicas_weighted(replicas, &vec![1.0; replicas.len()])
}

/// Elementwise weighted mean.
pub fn aggregate_replicas_weighted(replicas: &[BranchParams], weights: &[f64]) -> Result<BranchParams> {
    check_replicas(replicas)?;
    if weights.len() != replicas.len() {
        return Err(Error::shape("replica weights", replicas.len(), weights.len()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidInput("replica weights must be nonnegative with a positive sum".into()));
    }
    let mut out = replicas[0].zeros_like();
    let sources: Vec<[&Array2<f64>; 12]> = replicas.iter().map(|r| r.tensors()).collect();
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(replicas.len());
    for (ti, target) in out.tensors_mut().into_iter().enumerate() {
        for (idx, slot) in target.indexed_iter_mut() {
            pairs.clear();
            pairs.extend(sources.iter().zip(weights).map(|(src, &w)| (src[ti][idx], w)));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            *slot = pairs.iter().map(|(v, w)| v * w).sum::<f64>() / total;
        }
    }
    Ok(out)
}

/// One replica's place in the schedule.
#[derive(Debug, Clone)]
struct Unit {
    id: usize,
    branch: usize,
    slice: usize,
    range: Range<usize>,
    len: usize,
    n_slices: usize,
}

fn plan_units(model: &ModelConfig, config: &TrainConfig, t: usize) -> Result<Vec<Unit>> {
    if config.window_sizes.len() != model.k {
        return Err(Error::Config(format!(
            "{} slice windows for k = {}",
            config.window_sizes.len(),
            model.k
        )));
    }
    if let Some(w) = config.window_sizes.iter().find(|&&w| w > t) {
        return Err(Error::Config(format!("slice window {w} exceeds series length {t}")));
    }
    let aging = *config.window_sizes.iter().min().expect("k >= 1");
    let lens = std::iter::once(aging).chain(config.window_sizes.iter().copied());
    let mut units = Vec::new();
    for (branch, len) in lens.enumerate() {
        let ranges = slice_ranges(t, len);
        let n_slices = ranges.len();
        for (slice, range) in ranges.into_iter().enumerate() {
            units.push(Unit { id: units.len(), branch, slice, range, len, n_slices });
        }
    }
    Ok(units)
}

/// Read-only data shared by all workers.
struct Shared<'a> {
    config: &'a TrainConfig,
    settings: LayerSettings,
    k: usize,
    train_mask: &'a [bool],
    re_scale: f64,
    batches: Vec<Vec<usize>>,
    batch_nbrs: Vec<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone, Copy, Default)]
struct LocalTerms {
    mc: f64,
    sc: f64,
    sr: f64,
}

enum ToWorker {
    Ship(Box<(Unit, Array2<f64>, BranchParams)>),
    Forward,
    Residual { unit: usize, residual: Array2<f64> },
    Collect,
}

enum ToCoordinator {
    Output { unit: usize, output: Array2<f64>, terms: LocalTerms },
    Final { unit: usize, params: BranchParams },
    Failed { worker: usize, message: String },
}

struct Replica {
    unit: Unit,
    batch_inputs: Vec<Array2<f64>>,
    params: BranchParams,
    adam: Adam,
    caches: Vec<Vec<LayerCache>>,
    reg_grad: Array2<f64>,
}

struct Worker<'a> {
    id: usize,
    shared: &'a Shared<'a>,
    replicas: Vec<Replica>,
}

impl<'a> Worker<'a> {
    fn new(id: usize, shared: &'a Shared<'a>) -> Self {
        Self { id, shared, replicas: Vec::new() }
    }

    fn handle(&mut self, msg: ToWorker, reply: &mut dyn FnMut(ToCoordinator)) {
        if let Err(e) = self.try_handle(msg, reply) {
            reply(ToCoordinator::Failed { worker: self.id, message: e.to_string() });
        }
    }

    fn try_handle(&mut self, msg: ToWorker, reply: &mut dyn FnMut(ToCoordinator)) -> Result<()> {
        match msg {
            ToWorker::Ship(ship) => {
                let (unit, input, params) = *ship;
                let batch_inputs = self
                    .shared
                    .batches
                    .iter()
                    .map(|b| input.select(Axis(0), b))
                    .collect();
                let adam = Adam::new(&params, self.shared.config.learning_rate);
                let reg_grad = Array2::zeros(input.dim());
                self.replicas.push(Replica { unit, batch_inputs, params, adam, caches: Vec::new(), reg_grad });
            }
            ToWorker::Forward => {
                for r in &mut self.replicas {
                    let (output, terms) = forward_replica(self.shared, r)?;
                    reply(ToCoordinator::Output { unit: r.unit.id, output, terms });
                }
            }
            ToWorker::Residual { unit, residual } => {
                let r = self
                    .replicas
                    .iter_mut()
                    .find(|r| r.unit.id == unit)
                    .ok_or_else(|| Error::InvalidInput(format!("unit {unit} not owned")))?;
                backward_replica(self.shared, r, residual.view())?;
            }
            ToWorker::Collect => {
                for r in &self.replicas {
                    reply(ToCoordinator::Final { unit: r.unit.id, params: r.params.clone() });
                }
            }
        }
        Ok(())
    }
}

type FwdItem = (usize, Array2<f64>, Vec<LayerCache>);
type BwdItem = (usize, Array2<f64>, Vec<LayerCache>, BranchParams);

fn forward_replica(shared: &Shared, r: &mut Replica) -> Result<(Array2<f64>, LocalTerms)> {
    let len = r.unit.len;
    let n = shared.train_mask.len();
    let params = &r.params;
    let items: Vec<FwdItem> = r
        .batch_inputs
        .iter()
        .enumerate()
        .map(|(b, x)| (b, x.clone(), Vec::with_capacity(4)))
        .collect();
    let stage = |s: usize, (b, h, mut caches): FwdItem| -> Result<FwdItem> {
        let (out, cache) = stage_forward(Stage::ALL[s], h.view(), &shared.batch_nbrs[b], params, shared.settings)?;
        caches.push(cache);
        Ok((b, out, caches))
    };
    let done = if shared.config.pipelined {
        run_pipeline(items, 4, stage)?
    } else {
        run_sequential(items, 4, stage)?
    };
    let mut full = Array2::zeros((n, len));
    r.caches.clear();
    for (b, out, caches) in done {
        for (row, &node) in shared.batches[b].iter().enumerate() {
            full.row_mut(node).assign(&out.row(row));
        }
        r.caches.push(caches);
    }

    let real = r.unit.range.len();
    let output = full.slice(s![.., ..real]).to_owned();
    let (terms, grad) = local_regularizer(shared, &r.unit, output.view())?;
    r.reg_grad.fill(0.0);
    r.reg_grad.slice_mut(s![.., ..real]).assign(&grad);
    Ok((output, terms))
}

/// Regularizer of one replica on its own (unpadded) span, and its gradient
/// already weighted by lambda and divided by the number of slices.
fn local_regularizer(shared: &Shared, unit: &Unit, out: ArrayView2<f64>) -> Result<(LocalTerms, Array2<f64>)> {
    let w = &shared.config.weights;
    let norm = w.normalization;
    let mask = Some(shared.train_mask);
    let span = out.ncols();
    let share = 1.0 / unit.n_slices as f64;
    let mut grad = Array2::zeros(out.dim());
    let mut terms = LocalTerms::default();
    if unit.branch == 0 {
        if span >= 3 {
            let mut g = Array2::zeros(out.dim());
            terms.sr = sr_term(out, mask, norm, Some(&mut g))?;
            grad.scaled_add(w.lambda3 * share, &g);
        }
    } else {
        let term_div = match norm {
            Normalization::Mean => shared.k as f64,
            Normalization::Sum => 1.0,
        };
        let seg = w.segment_window[unit.branch - 1];
        if span >= 2 * seg {
            let mut g = Array2::zeros(out.dim());
            terms.mc = mc_term(out, seg, mask, norm, Some(&mut g))?;
            grad.scaled_add(w.lambda1 * share / term_div, &g);
        }
        if span >= 2 {
            let mut g = Array2::zeros(out.dim());
            terms.sc = sc_term(out, mask, norm, Some(&mut g))?;
            grad.scaled_add(w.lambda2 * share / term_div, &g);
        }
    }
    Ok((terms, grad))
}

fn backward_replica(shared: &Shared, r: &mut Replica, residual: ArrayView2<f64>) -> Result<()> {
    let real = residual.ncols();
    let mut grad_out = r.reg_grad.clone();
    grad_out
        .slice_mut(s![.., ..real])
        .scaled_add(shared.re_scale, &residual);
    let params = &r.params;
    let items: Vec<BwdItem> = std::mem::take(&mut r.caches)
        .into_iter()
        .enumerate()
        .map(|(b, caches)| (b, grad_out.select(Axis(0), &shared.batches[b]), caches, params.zeros_like()))
        .collect();
    let stage = |s: usize, (b, g, caches, mut grads): BwdItem| -> Result<BwdItem> {
        let layer = 3 - s;
        let dx = stage_backward(Stage::ALL[layer], g.view(), &shared.batch_nbrs[b], params, &caches[layer], &mut grads);
        Ok((b, dx, caches, grads))
    };
    let done = if shared.config.pipelined {
        run_pipeline(items, 4, stage)?
    } else {
        run_sequential(items, 4, stage)?
    };
    let mut total = params.zeros_like();
    for (_, _, _, g) in done {
        for (acc, part) in total.tensors_mut().into_iter().zip(g.tensors()) {
            *acc += part;
        }
    }
    r.adam.step(&mut r.params, &total);
    Ok(())
}

/// How the coordinator reaches workers.
trait Transport {
    fn send(&mut self, worker: usize, msg: ToWorker) -> Result<()>;
    fn recv(&mut self) -> Result<ToCoordinator>;
}

/// Executes worker handlers on the calling thread, in send order.
struct Inline<'a> {
    workers: Vec<Worker<'a>>,
    queue: VecDeque<ToCoordinator>,
}

impl Transport for Inline<'_> {
    fn send(&mut self, worker: usize, msg: ToWorker) -> Result<()> {
        let queue = &mut self.queue;
        self.workers[worker].handle(msg, &mut |m| queue.push_back(m));
        Ok(())
    }

    fn recv(&mut self) -> Result<ToCoordinator> {
        self.queue
            .pop_front()
            .ok_or_else(|| Error::Worker { worker: 0, message: "no pending reply".into() })
    }
}

struct Threads {
    to_workers: Vec<Sender<ToWorker>>,
    from_workers: Receiver<ToCoordinator>,
}

impl Transport for Threads {
    fn send(&mut self, worker: usize, msg: ToWorker) -> Result<()> {
        self.to_workers[worker].send(msg).map_err(|_| Error::Worker {
            worker,
            message: "worker channel closed".into(),
        })
    }

    fn recv(&mut self) -> Result<ToCoordinator> {
        self.from_workers.recv().map_err(|_| Error::Worker {
            worker: usize::MAX,
            message: "all workers exited".into(),
        })
    }
}

struct Coordinated {
    params: Vec<BranchParams>,
    log: TrainLog,
    wait_s: f64,
    assemble_s: f64,
    epoch_times: Vec<f64>,
    messages: usize,
}

fn expect_output(msg: ToCoordinator) -> Result<(usize, Array2<f64>, LocalTerms)> {
    match msg {
        ToCoordinator::Output { unit, output, terms } => Ok((unit, output, terms)),
        ToCoordinator::Failed { worker, message } => Err(Error::Worker { worker, message }),
        ToCoordinator::Final { .. } => Err(Error::Worker { worker: usize::MAX, message: "unexpected final params".into() }),
    }
}

#[allow(clippy::too_many_arguments)]
fn coordinate(
    transport: &mut dyn Transport,
    x: ArrayView2<f64>,
    units: &[Unit],
    owners: &[usize],
    n_workers: usize,
    initial: Vec<BranchParams>,
    shared: &Shared,
    val_mask: Option<&[bool]>,
) -> Result<Coordinated> {
    let (n, t) = x.dim();
    let config = shared.config;
    let mut messages = 0;
    for (u, p) in units.iter().zip(initial) {
        let input = padded_slice(x, u.range.clone(), u.len);
        transport.send(owners[u.id], ToWorker::Ship(Box::new((u.clone(), input, p))))?;
        messages += 1;
    }
    let mut log = TrainLog::default();
    let (mut wait_s, mut assemble_s) = (0.0, 0.0);
    let mut epoch_times = Vec::with_capacity(config.epochs);
    let term_div = match config.weights.normalization {
        Normalization::Mean => shared.k as f64,
        Normalization::Sum => 1.0,
    };

    for epoch in 0..config.epochs {
        let start = Instant::now();
        for w in 0..n_workers {
            transport.send(w, ToWorker::Forward)?;
        }
        messages += n_workers;
        let mut terms = vec![LocalTerms::default(); units.len()];
        let mut branch_out = vec![Array2::<f64>::zeros((n, t)); shared.k + 1];
        for _ in 0..units.len() {
            let wait = Instant::now();
            let msg = transport.recv()?;
            wait_s += wait.elapsed().as_secs_f64();
            messages += 1;
            let (uid, output, local) = expect_output(msg)?;
            let u = &units[uid];
            branch_out[u.branch].slice_mut(s![.., u.range.clone()]).assign(&output);
            terms[uid] = local;
        }

        let assemble = Instant::now();
        let mut residual = x.to_owned();
        for o in &branch_out {
            residual -= o;
        }
        let mut re = 0.0;
        for (l, mut row) in residual.axis_iter_mut(Axis(0)).enumerate() {
            if shared.train_mask[l] {
                re += row.dot(&row);
            } else {
                row.fill(0.0);
            }
        }
        re *= -shared.re_scale / 2.0;
        let (mut mc, mut sc, mut sr) = (0.0, 0.0, 0.0);
        for (u, lt) in units.iter().zip(&terms) {
            let share = 1.0 / u.n_slices as f64;
            mc += lt.mc * share / term_div;
            sc += lt.sc * share / term_div;
            sr += lt.sr * share;
            let local = LossBreakdown::new(re, lt.mc, lt.sc, lt.sr, &config.weights);
            log.steps.push(StepRecord {
                epoch,
                branch: Some(u.branch),
                slice: Some(u.slice),
                ..StepRecord::whole(epoch, &local)
            });
        }
        let loss = LossBreakdown::new(re, mc, sc, sr, &config.weights);
        if !loss.is_finite() {
            log.steps.retain(|s| s.epoch < epoch);
            return Err(Error::Diverged { epoch, log: Box::new(log) });
        }
        let validation = match val_mask {
            Some(m) => {
                let d = Decomposition::from_terms(branch_out);
                Some(total_loss_masked(x, &d, &config.weights, Some(m))?.total)
            }
            None => None,
        };
        assemble_s += assemble.elapsed().as_secs_f64();

        for u in units {
            let r = residual.slice(s![.., u.range.clone()]).to_owned();
            transport.send(owners[u.id], ToWorker::Residual { unit: u.id, residual: r })?;
            messages += 1;
        }
        let wall = start.elapsed().as_secs_f64();
        epoch_times.push(wall);
        log.epochs.push(EpochRecord { epoch, loss, validation, wall_s: wall });
    }

    for w in 0..n_workers {
        transport.send(w, ToWorker::Collect)?;
    }
    messages += n_workers;
    let mut finals: Vec<Option<BranchParams>> = vec![None; units.len()];
    for _ in 0..units.len() {
        match transport.recv()? {
            ToCoordinator::Final { unit, params } => finals[unit] = Some(params),
            ToCoordinator::Failed { worker, message } => return Err(Error::Worker { worker, message }),
            ToCoordinator::Output { .. } => {
                return Err(Error::Worker { worker: usize::MAX, message: "unexpected output".into() })
            }
        }
        messages += 1;
    }
    let params = finals
        .into_iter()
        .enumerate()
        .map(|(u, p)| p.ok_or_else(|| Error::Worker { worker: owners[u], message: format!("unit {u} not returned") }))
        .collect::<Result<Vec<_>>>()?;
    Ok(Coordinated { params, log, wait_s, assemble_s, epoch_times, messages })
}

/// Parallel schedule: temporal-slice replicas of every branch spread across
/// `n_workers` threads (or run inline), coupled through the residual.
pub fn train_parallel(
    x: ArrayView2<f64>,
    graph: &FleetGraph,
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.check_model(model, x.ncols())?;
    let (n, t) = x.dim();
    if n != graph.n_nodes() {
        return Err(Error::shape("input rows vs graph nodes", graph.n_nodes(), n));
    }
    let split = split_nodes(n, config.split, config.seed)?;
    let n_train = split.train.iter().filter(|&&b| b).count();
    let re_scale = match config.weights.normalization {
        Normalization::Mean => -2.0 / (n_train * t) as f64,
        Normalization::Sum => -2.0,
    };
    let batches = node_batches(n, config.node_batch_size);
    let batch_nbrs = batches.iter().map(|b| graph.induced(b).neighborhoods()).collect();
    let shared = Shared {
        config,
        settings: LayerSettings::from(model),
        k: model.k,
        train_mask: &split.train,
        re_scale,
        batches,
        batch_nbrs,
    };
    let units = plan_units(model, config, t)?;
    let owners: Vec<usize> = units.iter().map(|u| u.id % config.n_workers).collect();
    let initial: Vec<BranchParams> = units
        .iter()
        .map(|u| init_branch(u.len, model, sub_seed(model.seed, u.branch as u64)))
        .collect();
    let val_mask = split.val.iter().any(|&b| b).then_some(split.val.as_slice());

    let start = Instant::now();
    let done = if config.inline {
        let workers = (0..config.n_workers).map(|w| Worker::new(w, &shared)).collect();
        let mut transport = Inline { workers, queue: VecDeque::new() };
        coordinate(&mut transport, x, &units, &owners, config.n_workers, initial, &shared, val_mask)?
    } else {
        std::thread::scope(|scope| {
            let (reply_tx, reply_rx) = unbounded();
            let mut to_workers = Vec::with_capacity(config.n_workers);
            for w in 0..config.n_workers {
                let (tx, rx) = unbounded::<ToWorker>();
                to_workers.push(tx);
                let reply_tx: Sender<ToCoordinator> = reply_tx.clone();
                let shared = &shared;
                scope.spawn(move || {
                    let mut worker = Worker::new(w, shared);
                    for msg in rx {
                        worker.handle(msg, &mut |m| {
                            let _ = reply_tx.send(m);
                        });
                    }
                });
            }
            drop(reply_tx);
            let mut transport = Threads { to_workers, from_workers: reply_rx };
            coordinate(&mut transport, x, &units, &owners, config.n_workers, initial, &shared, val_mask)
        })?
    };
    let total_s = start.elapsed().as_secs_f64();

    let mut replica_sets: Vec<ReplicaSet> = (0..=model.k)
        .map(|b| ReplicaSet { branch_id: b, replicas: Vec::new() })
        .collect();
    let mut slice_weights: Vec<Vec<f64>> = vec![Vec::new(); model.k + 1];
    for (u, p) in units.iter().zip(done.params) {
        replica_sets[u.branch].replicas.push(p);
        slice_weights[u.branch].push(u.range.len() as f64);
    }
    let branches = replica_sets
        .iter()
        .zip(&slice_weights)
        .map(|(set, w)| match config.aggregation {
            Aggregation::Uniform => aggregate_replicas(&set.replicas),
            Aggregation::SliceLength => aggregate_replicas_weighted(&set.replicas, w),
        })
        .collect::<Result<Vec<_>>>()?;

    let epochs = done.epoch_times.len().max(1) as f64;
    let timing = TimingReport {
        workers: config.n_workers,
        mean_epoch_time_s: done.epoch_times.iter().sum::<f64>() / epochs,
        epoch_times_s: done.epoch_times,
        total_s,
        wait_s: done.wait_s,
        assemble_s: done.assemble_s,
        n_replicas: units.len(),
        n_node_batches: shared.batches.len(),
        messages: done.messages,
    };
    Ok(TrainOutcome {
        model: TrainedModel { config: model.clone(), branches },
        log: done.log,
        split,
        timing: Some(timing),
        replicas: replica_sets,
    })
}
