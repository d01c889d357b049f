use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use gtrend_core::fleet_graph::{
    build_correlation_adjacency, build_spatial_adjacency_with, load_fleet_csv, write_fleet_csv, FleetGraph,
    FleetSeries, GraphMeta, GraphMode,
};
use gtrend_core::gae_array::TrainedModel;
use gtrend_core::objective::reconstruction_error;
use gtrend_core::para_trainer::{benchmark_speedup, SplitFractions, TrainConfig};
use gtrend_core::seeds::sub_seed;
use gtrend_core::synth_fleet::{desk_scale, write_dataset, DegradationSpec, FleetPreset};
use gtrend_core::trend_outputs::{mape, plr_report, scaled_ed, PlrSummary};
use gtrend_core::workflow::{self, TrainerKind};
use gtrend_core::gae_array::Decomposition;
use log::info;
use serde_json::{json, Value};

use crate::config::{ConfigError, RunConfig};

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// linear, piecewise_linear or exponential.
    #[arg(long, default_value = "linear")]
    pub case: String,
    #[arg(long, default_value_t = 20)]
    pub nodes: usize,
    #[arg(long, default_value_t = 3.0)]
    pub years: f64,
    #[arg(long, default_value_t = 365)]
    pub samples_per_year: usize,
    /// Annual rate in %/year (pre-breakpoint rate for the piecewise case).
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub breakpoint_years: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seasonal_amplitude: Option<f64>,
    #[arg(long, default_value_t = 5)]
    pub clusters: usize,
    /// Base name of the two CSVs.
    #[arg(long, default_value = "fleet")]
    pub name: String,
}

pub fn generate(config: &RunConfig, a: GenerateArgs) -> Result<Value> {
    let case = crate::parse_case(&a.case)?;
    let base = desk_scale(case);
    let spec = DegradationSpec {
        annual_rate: a.rate.unwrap_or(base.spec.annual_rate),
        breakpoint_years: a.breakpoint_years.unwrap_or(base.spec.breakpoint_years),
        noise_sd: a.noise.unwrap_or(base.spec.noise_sd),
        seasonal_amplitude: a.seasonal_amplitude.unwrap_or(base.spec.seasonal_amplitude),
        n_clusters: a.clusters,
        seed: sub_seed(config.seed, crate::STREAM_DATA),
        ..base.spec
    };
    let preset = FleetPreset { spec, n_nodes: a.nodes, years: a.years, samples_per_year: a.samples_per_year };
    let (series, truth) = preset.generate()?;
    let (data, rdp) = write_dataset(&config.out, &a.name, &series, &truth)?;
    info!("wrote {} and {}", data.display(), rdp.display());
    Ok(json!({
        "data": data,
        "rdp": rdp,
        "case": case.name(),
        "n_nodes": series.n_nodes(),
        "n_samples": series.len(),
        "samples_per_year": series.samples_per_year(),
        "breakpoint_years": preset.spec.breakpoint_years,
        "node_rate_summary": PlrSummary::of(&truth.node_rates),
    }))
}

fn data_path(explicit: Option<PathBuf>, config: &RunConfig) -> Result<PathBuf> {
    let path = explicit
        .or_else(|| config.data.fleet.clone())
        .ok_or_else(|| ConfigError("no fleet data: pass --data or set data.fleet".into()))?;
    if !path.exists() {
        bail!(ConfigError(format!("data file {} does not exist", path.display())));
    }
    Ok(path)
}

fn load(path: &Path) -> Result<FleetSeries> {
    Ok(load_fleet_csv(path)?)
}

fn build(series: &FleetSeries, mode: GraphMode, epsilon: f64, config: &RunConfig) -> Result<(FleetGraph, GraphMeta)> {
    let graph = match mode {
        GraphMode::Spatial => {
            let loc = series
                .locations()
                .ok_or_else(|| ConfigError("spatial graph needs lat/lon columns; use --mode correlation".into()))?;
            build_spatial_adjacency_with(loc, epsilon, config.fleet_graph.metric)?
        }
        GraphMode::Correlation => build_correlation_adjacency(series, epsilon)?,
    };
    let meta = GraphMeta { n_nodes: graph.n_nodes(), epsilon, mode };
    Ok((graph, meta))
}

/// The configured edge list when there is one, else a graph built from the data.
fn graph_for(series: &FleetSeries, config: &RunConfig) -> Result<(FleetGraph, GraphMeta)> {
    if let Some(edges) = &config.data.graph {
        let (graph, meta) = FleetGraph::read_edge_list(edges, &edges.with_extension("json"))?;
        if graph.n_nodes() != series.n_nodes() {
            bail!(ConfigError(format!(
                "graph has {} nodes, data has {}",
                graph.n_nodes(),
                series.n_nodes()
            )));
        }
        return Ok((graph, meta));
    }
    build(series, config.fleet_graph.mode, config.fleet_graph.epsilon, config)
}

#[derive(Debug, Args)]
pub struct BuildGraphArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<GraphMode>,
    #[arg(long)]
    pub epsilon: Option<f64>,
}

fn parse_mode(s: &str) -> std::result::Result<GraphMode, String> {
    match s {
        "spatial" => Ok(GraphMode::Spatial),
        "correlation" => Ok(GraphMode::Correlation),
        other => Err(format!("unknown graph mode {other:?}; valid modes: spatial, correlation")),
    }
}

pub fn build_graph(config: &RunConfig, a: BuildGraphArgs) -> Result<Value> {
    let series = load(&data_path(a.data, config)?)?;
    let mode = a.mode.unwrap_or(config.fleet_graph.mode);
    let epsilon = a.epsilon.unwrap_or(config.fleet_graph.epsilon);
    let (graph, meta) = build(&series, mode, epsilon, config)?;
    std::fs::create_dir_all(&config.out)?;
    let edges = config.out.join("graph.edges");
    let meta_path = config.out.join("graph.json");
    graph.write_edge_list(&edges, &meta_path, &meta)?;
    let isolated = (0..graph.n_nodes())
        .filter(|&i| (0..graph.n_nodes()).all(|j| !graph.has_edge(i, j)))
        .count();
    Ok(json!({
        "edges": edges,
        "meta": meta_path,
        "n_nodes": graph.n_nodes(),
        "n_edges": graph.n_edges(),
        "isolated_nodes": isolated,
        "epsilon": epsilon,
        "mode": meta.mode,
    }))
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Use the serial reference optimizer instead of the parallel schedule.
    #[arg(long)]
    pub serial: bool,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

pub fn train(config: &RunConfig, a: TrainArgs) -> Result<Value> {
    let mut config = config.clone();
    if let Some(w) = a.workers {
        config.para_trainer.n_workers = w;
    }
    if let Some(e) = a.epochs {
        config.para_trainer.epochs = e;
    }
    if a.serial {
        config.para_trainer.trainer = TrainerKind::Serial;
    }
    let series = load(&data_path(a.data, &config)?)?;
    let (graph, meta) = graph_for(&series, &config)?;
    let model = config.model(series.len(), series.samples_per_year())?;
    let train = config.train(&model)?;
    let trainer = config.para_trainer.trainer;
    info!(
        "training {} branches on {} nodes x {} samples, {} epochs ({trainer:?})",
        model.n_branches(),
        series.n_nodes(),
        series.len(),
        train.epochs
    );
    let (outcome, _) = workflow::fit(series.values().view(), &graph, &model, &train, trainer)?;

    std::fs::create_dir_all(&config.out)?;
    let checkpoint = config.out.join("checkpoint");
    outcome.model.save(&checkpoint, Some(meta))?;
    let log_path = config.out.join("train_log.jsonl");
    outcome.log.write_jsonl(&log_path)?;
    std::fs::write(config.out.join("run_config.toml"), toml::to_string(&config)?)?;
    let timing_path = match &outcome.timing {
        Some(t) => {
            let p = config.out.join("timing.csv");
            t.write_csv(&p, (t.workers == 1).then_some(1.0))?;
            Some(p)
        }
        None => None,
    };
    let last = outcome.log.epochs.last().expect("at least one epoch");
    let (n_train, n_val, n_test) = outcome.split.counts();
    Ok(json!({
        "checkpoint": checkpoint,
        "train_log": log_path,
        "timing": timing_path,
        "trainer": trainer,
        "workers": train.n_workers,
        "epochs": train.epochs,
        "final_loss": last.loss,
        "validation_loss": last.validation,
        "split": {"train": n_train, "val": n_val, "test": n_test},
        "mean_epoch_time_s": outcome.timing.as_ref().map(|t| t.mean_epoch_time_s),
    }))
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    /// Checkpoint directory; defaults to `<out>/checkpoint`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Reload the written files and report their reconstruction error.
    #[arg(long)]
    pub verify: bool,
}

pub fn decompose(config: &RunConfig, a: DecomposeArgs) -> Result<Value> {
    let dir = a.checkpoint.unwrap_or_else(|| config.out.join("checkpoint"));
    let (model, meta) = TrainedModel::load(&dir).with_context(|| format!("loading checkpoint {}", dir.display()))?;
    let data = data_path(a.data, config)?;
    let series = load(&data)?;
    let graph = match (&config.data.graph, meta.graph) {
        (None, Some(g)) => build(&series, g.mode, g.epsilon, config)?.0,
        _ => graph_for(&series, config)?.0,
    };
    let d = workflow::decompose(series.values().view(), &graph, &model)?;
    std::fs::create_dir_all(&config.out)?;
    let mut files = vec![config.out.join("h_a.csv")];
    write_fleet_csv(&series.with_values(d.h_a.clone())?, &files[0])?;
    for (q, f) in d.h_f.iter().enumerate() {
        let p = config.out.join(format!("h_f_{}.csv", q + 1));
        write_fleet_csv(&series.with_values(f.clone())?, &p)?;
        files.push(p);
    }
    let mut out = json!({
        "files": files,
        "n_nodes": series.n_nodes(),
        "n_samples": series.len(),
        "k": d.k(),
    });
    if a.verify {
        let terms = files
            .iter()
            .map(|p| load(p).map(|s| s.values().clone()))
            .collect::<Result<Vec<_>>>()?;
        let reloaded = Decomposition::new(terms[0].clone(), terms[1..].to_vec())?;
        out["re"] = json!(reconstruction_error(series.values().view(), &reloaded)?);
    }
    Ok(out)
}

#[derive(Debug, Args)]
pub struct PlrArgs {
    /// Aging-term CSV in the fleet schema, e.g. `h_a.csv`.
    #[arg(long)]
    pub edp: PathBuf,
}

pub fn plr(config: &RunConfig, a: PlrArgs) -> Result<Value> {
    let edp = load(&a.edp)?;
    let report = plr_report(edp.values().view(), edp.samples_per_year())?;
    std::fs::create_dir_all(&config.out)?;
    let path = config.out.join("plr.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    let per_node: serde_json::Map<String, Value> = edp
        .node_ids()
        .iter()
        .zip(&report.per_node_plr)
        .map(|(id, v)| (id.clone(), json!(v)))
        .collect();
    Ok(json!({
        "report": path,
        "fleet_mean_plr": report.fleet_mean_plr,
        "per_node_plr": per_node,
        "summary": PlrSummary::of(&report.per_node_plr),
    }))
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub edp: PathBuf,
    #[arg(long)]
    pub rdp: PathBuf,
}

pub fn evaluate(a: EvaluateArgs) -> Result<Value> {
    let edp = load(&a.edp)?;
    let rdp = load(&a.rdp)?;
    if edp.node_ids() != rdp.node_ids() {
        bail!(ConfigError("edp and rdp list different nodes".into()));
    }
    let (e, r) = (edp.values().view(), rdp.values().view());
    let summary = plr_report(e, edp.samples_per_year())
        .map(|p| PlrSummary::of(&p.per_node_plr))
        .ok();
    Ok(json!({
        "mape": mape(e, r)?,
        "ed": scaled_ed(e, r)?,
        "per_node_plr_summary": summary,
    }))
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Fleet CSV to train on; a synthetic fleet is generated when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    pub workers: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    pub epochs: usize,
    /// Synthetic fleet size.
    #[arg(long, default_value_t = 50)]
    pub nodes: usize,
    /// Synthetic series length in days.
    #[arg(long, default_value_t = 1024)]
    pub samples: usize,
}

pub fn benchmark(config: &RunConfig, a: BenchmarkArgs) -> Result<Value> {
    let series = match a.data.or_else(|| config.data.fleet.clone()) {
        Some(p) => load(&p)?,
        None => {
            let mut preset = desk_scale(gtrend_core::synth_fleet::DegradationCase::Linear);
            preset.n_nodes = a.nodes;
            preset.years = a.samples as f64 / preset.samples_per_year as f64;
            preset.spec.seed = sub_seed(config.seed, crate::STREAM_BENCH);
            preset.generate()?.0
        }
    };
    let (graph, _) = graph_for(&series, config)?;
    let mut bench = config.clone();
    if config.gae_array.window_sizes.is_empty() && config.gae_array.k == 1 {
        // month, quarter and year branches keep every worker busy
        bench.gae_array.k = 3;
    }
    let model = bench.model(series.len(), series.samples_per_year())?;
    let train = TrainConfig {
        epochs: a.epochs,
        split: SplitFractions::all_train(),
        ..bench.train(&model)?
    };
    let xs = workflow::Standardizer::fit(series.values().view())?.transform(series.values().view())?;
    let table = benchmark_speedup(xs.view(), &graph, &model, &train, &a.workers)?;
    std::fs::create_dir_all(&config.out)?;
    let csv = config.out.join("speedup.csv");
    table.write_csv(&csv)?;
    for flag in &table.flags {
        log::warn!("{flag}");
    }
    Ok(json!({ "csv": csv, "table": table }))
}
