//! Synthetic PV fleets with a known degradation pattern.
//!
//! Each node's series is `rdp(t) * (1 + A sin(2 pi t / s)) + noise`, where `rdp` is
//! the noiseless aging curve. Nodes are grouped into spatial clusters; nodes in
//! one cluster sit near a shared centroid and share a degradation rate up to a
//! small per-node jitter.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Months, Utc};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fleet_graph::{default_start, write_fleet_csv, FleetSeries};

/// Latitude/longitude box the cluster centroids are drawn from (roughly Colorado).
const LAT_RANGE: (f64, f64) = (37.0, 41.0);
const LON_RANGE: (f64, f64) = (-109.0, -102.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationCase {
    Linear,
    PiecewiseLinear,
    Exponential,
}

impl DegradationCase {
    pub const ALL: [DegradationCase; 3] = [
        DegradationCase::Linear,
        DegradationCase::PiecewiseLinear,
        DegradationCase::Exponential,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DegradationCase::Linear => "linear",
            DegradationCase::PiecewiseLinear => "piecewise_linear",
            DegradationCase::Exponential => "exponential",
        }
    }
}

impl std::str::FromStr for DegradationCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(DegradationCase::Linear),
            "piecewise" | "piecewise_linear" | "piecewise-linear" => {
                Ok(DegradationCase::PiecewiseLinear)
            }
            "exponential" | "exp" => Ok(DegradationCase::Exponential),
            other => Err(Error::InvalidInput(format!(
                "unknown degradation case {other:?}; valid cases: linear, piecewise_linear, exponential"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub case: DegradationCase,
    /// %/year. For the piecewise case this is the rate before the breakpoint.
    pub annual_rate: f64,
    /// %/year after the breakpoint (piecewise case only).
    pub post_break_rate: f64,
    pub breakpoint_years: f64,
    pub seasonal_amplitude: f64,
    pub noise_sd: f64,
    pub n_clusters: usize,
    pub geo_jitter: f64,
    pub rate_jitter: f64,
    /// Relative spread of the rate between clusters; 0 gives every cluster `annual_rate`.
    pub cluster_spread: f64,
    pub baseline: f64,
    pub seed: u64,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        full_scale(DegradationCase::Linear).spec
    }
}

/// A spec together with the fleet dimensions it is meant to be generated at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetPreset {
    pub spec: DegradationSpec,
    pub n_nodes: usize,
    pub years: f64,
    pub samples_per_year: usize,
}

impl FleetPreset {
    /// Samples per node over the calendar span starting at the default start date,
    /// leap days included.
    pub fn calendar_points(&self) -> usize {
        let start = default_start();
        let months = (self.years * 12.0).round() as u32;
        let end = start.checked_add_months(Months::new(months)).unwrap();
        let days = (end - start).num_days() as usize;
        days * self.samples_per_year / 365
    }

    pub fn generate(&self) -> Result<(FleetSeries, GroundTruth)> {
        generate_fleet(&self.spec, self.n_nodes, self.years, self.samples_per_year)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Noiseless aging component, N x T.
    pub rdp: Array2<f64>,
    /// Per-node rate in %/year (pre-breakpoint rate for the piecewise case).
    pub node_rates: Vec<f64>,
    pub cluster_of: Vec<usize>,
    pub cluster_rates: Vec<f64>,
}

/// Full-scale dataset parameters: 100 inverters in 5 clusters, 10 years at
/// 15-minute resolution, 4% position jitter and 0.2% severity jitter.
pub fn full_scale(case: DegradationCase) -> FleetPreset {
    let (annual_rate, post_break_rate) = match case {
        DegradationCase::PiecewiseLinear => (2.0, -1.0),
        _ => (-1.0, -1.0),
    };
    FleetPreset {
        spec: DegradationSpec {
            case,
            annual_rate,
            post_break_rate,
            breakpoint_years: 2.0,
            seasonal_amplitude: 0.2,
            noise_sd: 0.02,
            n_clusters: 5,
            geo_jitter: 0.04,
            rate_jitter: 0.002,
            cluster_spread: 0.0,
            baseline: 100.0,
            seed: 0,
        },
        n_nodes: 100,
        years: 10.0,
        samples_per_year: 96 * 365,
    }
}

/// Laptop-sized variant of [`full_scale`]: 20 nodes, 3 years, daily sampling.
pub fn desk_scale(case: DegradationCase) -> FleetPreset {
    FleetPreset {
        n_nodes: 20,
        years: 3.0,
        samples_per_year: 365,
        ..full_scale(case)
    }
}

impl DegradationSpec {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.annual_rate.abs() <= 50.0) {
            bad.push("annual_rate");
        }
        if self.case == DegradationCase::PiecewiseLinear {
            if !(self.post_break_rate.abs() <= 50.0) {
                bad.push("post_break_rate");
            }
            if !(self.breakpoint_years >= 0.0) {
                bad.push("breakpoint_years");
            }
        }
        let unit = |v: f64| (0.0..1.0).contains(&v);
        if !unit(self.seasonal_amplitude) {
            bad.push("seasonal_amplitude");
        }
        if !unit(self.noise_sd) {
            bad.push("noise_sd");
        }
        if !unit(self.geo_jitter) {
            bad.push("geo_jitter");
        }
        if !unit(self.rate_jitter) {
            bad.push("rate_jitter");
        }
        if !unit(self.cluster_spread) {
            bad.push("cluster_spread");
        }
        if self.n_clusters < 1 {
            bad.push("n_clusters");
        }
        if !(self.baseline > 0.0 && self.baseline.is_finite()) {
            bad.push("baseline");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid degradation spec fields: {}", bad.join(", "))))
        }
    }

    /// Noiseless aging value at `years` since the start for a node whose rates
    /// are scaled by `factor`.
    fn aging(&self, years: f64, factor: f64) -> f64 {
        let r1 = self.annual_rate * factor / 100.0;
        match self.case {
            DegradationCase::Linear => self.baseline * (1.0 + r1 * years),
            DegradationCase::PiecewiseLinear => {
                let r2 = self.post_break_rate * factor / 100.0;
                let b = self.breakpoint_years;
                if years <= b {
                    self.baseline * (1.0 + r1 * years)
                } else {
                    self.baseline * (1.0 + r1 * b + r2 * (years - b))
                }
            }
            DegradationCase::Exponential => self.baseline * (1.0 + r1).powf(years),
        }
    }
}

pub fn generate_fleet(
    spec: &DegradationSpec,
    n_nodes: usize,
    years: f64,
    samples_per_year: usize,
) -> Result<(FleetSeries, GroundTruth)> {
    generate_fleet_at(spec, n_nodes, years, samples_per_year, default_start())
}

pub fn generate_fleet_at(
    spec: &DegradationSpec,
    n_nodes: usize,
    years: f64,
    samples_per_year: usize,
    start: DateTime<Utc>,
) -> Result<(FleetSeries, GroundTruth)> {
    spec.validate()?;
    if n_nodes < spec.n_clusters {
        return Err(Error::InvalidInput(format!(
            "n_nodes {n_nodes} < n_clusters {}",
            spec.n_clusters
        )));
    }
    if samples_per_year == 0 {
        return Err(Error::InvalidInput("samples_per_year must be >= 1".into()));
    }
    let t_len = (years * samples_per_year as f64).round() as usize;
    if !(years.is_finite()) || t_len < 2 * samples_per_year {
        return Err(Error::TooShort(format!(
            "{years} years at {samples_per_year}/year gives {t_len} samples; need at least two years"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centroids: Vec<(f64, f64)> = (0..spec.n_clusters)
        .map(|_| {
            (
                rng.random_range(LAT_RANGE.0..LAT_RANGE.1),
                rng.random_range(LON_RANGE.0..LON_RANGE.1),
            )
        })
        .collect();
    let cluster_factor: Vec<f64> = (0..spec.n_clusters)
        .map(|_| 1.0 + spec.cluster_spread * rng.random_range(-1.0..=1.0))
        .collect();
    let extent = (LAT_RANGE.1 - LAT_RANGE.0, LON_RANGE.1 - LON_RANGE.0);

    let mut locations = Array2::zeros((n_nodes, 2));
    let mut factors = Vec::with_capacity(n_nodes);
    let mut cluster_of = Vec::with_capacity(n_nodes);
    for l in 0..n_nodes {
        let c = l * spec.n_clusters / n_nodes;
        cluster_of.push(c);
        locations[[l, 0]] = centroids[c].0 + spec.geo_jitter * extent.0 * rng.random_range(-1.0..=1.0);
        locations[[l, 1]] = centroids[c].1 + spec.geo_jitter * extent.1 * rng.random_range(-1.0..=1.0);
        factors.push(cluster_factor[c] * (1.0 + spec.rate_jitter * rng.random_range(-1.0..=1.0)));
    }

    let spy = samples_per_year as f64;
    let mut rdp = Array2::zeros((n_nodes, t_len));
    for l in 0..n_nodes {
        for t in 0..t_len {
            let v = spec.aging(t as f64 / spy, factors[l]);
            if !(v > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "degradation drives node {l} non-positive at sample {t}; lower annual_rate or years"
                )));
            }
            rdp[[l, t]] = v;
        }
    }

    let noise = Normal::new(0.0, spec.noise_sd * spec.baseline).expect("finite noise sd");
    let mut values = Array2::zeros((n_nodes, t_len));
    for l in 0..n_nodes {
        for t in 0..t_len {
            let season = 1.0 + spec.seasonal_amplitude * (2.0 * std::f64::consts::PI * t as f64 / spy).sin();
            let eps = if spec.noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            values[[l, t]] = rdp[[l, t]] * season + eps;
        }
    }

    let ids = (0..n_nodes).map(|l| format!("inv{l:03}")).collect();
    let series = FleetSeries::on_grid(ids, start, samples_per_year, values, Some(locations))?;
    let truth = GroundTruth {
        rdp,
        node_rates: factors.iter().map(|f| f * spec.annual_rate).collect(),
        cluster_of,
        cluster_rates: cluster_factor.iter().map(|f| f * spec.annual_rate).collect(),
    };
    Ok((series, truth))
}

/// Writes `<name>.csv` and `<name>.rdp.csv` into `dir`, returning both paths.
/// Both use the fleet schema, the ground truth sitting in the value column.
pub fn write_dataset(
    dir: &Path,
    name: &str,
    series: &FleetSeries,
    truth: &GroundTruth,
) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let data = dir.join(format!("{name}.csv"));
    let rdp = dir.join(format!("{name}.rdp.csv"));
    write_fleet_csv(series, &data)?;
    let rdp_series = FleetSeries::new(
        series.node_ids().to_vec(),
        series.timestamps().to_vec(),
        truth.rdp.clone(),
        None,
    )?;
    write_fleet_csv(&rdp_series, &rdp)?;
    Ok((data, rdp))
}
