//! Degradation pattern, performance loss rate, and evaluation metrics.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gae_array::Decomposition;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlrReport {
    /// %/year per node.
    pub per_node_plr: Vec<f64>,
    pub fleet_mean_plr: f64,
    #[serde(skip)]
    pub edp: Array2<f64>,
}

/// Summary statistics of per-node PLR values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlrSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub sd: f64,
}

impl PlrSummary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        Self {
            mean,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            sd,
        }
    }
}

/// The estimated degradation pattern is the aging term itself.
pub fn extract_edp(d: &Decomposition) -> Array2<f64> {
    d.h_a.clone()
}

/// Mean percent change over all `T - s` pairs of samples one year apart:
/// `mean_t (h[t + s] - h[t]) / h[t] * 100`.
pub fn global_plr(h_a_row: ArrayView1<f64>, samples_per_year: usize) -> Result<f64> {
    let t = h_a_row.len();
    let s = samples_per_year;
    if s == 0 {
        return Err(Error::InvalidInput("samples_per_year must be >= 1".into()));
    }
    if t <= s {
        return Err(Error::TooShort(format!(
            "series of {t} samples has no pair one year ({s} samples) apart"
        )));
    }
    let m = t - s;
    let mut sum = 0.0;
    for i in 0..m {
        let v = h_a_row[i];
        if v == 0.0 {
            return Err(Error::Numeric(format!("zero aging value at t = {i} used as PLR denominator")));
        }
        sum += (h_a_row[i + s] - v) / v;
    }
    Ok(sum / m as f64 * 100.0)
}

pub fn plr_report(edp: ArrayView2<f64>, samples_per_year: usize) -> Result<PlrReport> {
    let per_node_plr = edp
        .rows()
        .into_iter()
        .map(|row| global_plr(row, samples_per_year))
        .collect::<Result<Vec<_>>>()?;
    let fleet_mean_plr = per_node_plr.iter().sum::<f64>() / per_node_plr.len().max(1) as f64;
    Ok(PlrReport {
        per_node_plr,
        fleet_mean_plr,
        edp: edp.to_owned(),
    })
}

fn same_shape(context: &'static str, a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(context, b.dim(), a.dim()));
    }
    Ok(())
}

/// Mean absolute percent error between estimated and real degradation patterns.
pub fn mape(edp: ArrayView2<f64>, rdp: ArrayView2<f64>) -> Result<f64> {
    same_shape("mape", &edp, &rdp)?;
    let (n, t) = rdp.dim();
    let denom = (n * t) as f64;
    let mut sum = 0.0;
    for ((idx, r), e) in rdp.indexed_iter().zip(edp.iter()) {
        if *r == 0.0 {
            return Err(Error::Numeric(format!("zero reference value at {idx:?}")));
        }
        sum += (e - r).abs() / (denom * r.abs());
    }
    Ok(sum * 100.0)
}

/// Each row divided by its first value, then the Euclidean distance per node,
/// averaged over nodes.
pub fn scaled_ed(edp: ArrayView2<f64>, rdp: ArrayView2<f64>) -> Result<f64> {
    same_shape("scaled_ed", &edp, &rdp)?;
    let n = rdp.nrows();
    if n == 0 || rdp.ncols() == 0 {
        return Err(Error::InvalidInput("scaled_ed on an empty matrix".into()));
    }
    let mut total = 0.0;
    for l in 0..n {
        let (e0, r0) = (edp[[l, 0]], rdp[[l, 0]]);
        if e0 == 0.0 || r0 == 0.0 {
            return Err(Error::Numeric(format!("node {l} has a zero first value")));
        }
        let d2: f64 = edp
            .row(l)
            .iter()
            .zip(rdp.row(l))
            .map(|(e, r)| (e / e0 - r / r0).powi(2))
            .sum();
        total += d2.sqrt();
    }
    Ok(total / n as f64)
}

/// Centered moving average with edge replication; a naive trend baseline.
pub fn moving_average_oracle(series: ArrayView2<f64>, window: usize) -> Result<Array2<f64>> {
    let t = series.ncols();
    if window < 3 || window % 2 == 0 || window > t {
        return Err(Error::InvalidInput(format!(
            "moving-average window must be odd, >= 3 and <= {t}; got {window}"
        )));
    }
    let half = window / 2;
    let mut out = Array2::zeros(series.dim());
    for (l, row) in series.rows().into_iter().enumerate() {
        let at = |i: isize| row[i.clamp(0, t as isize - 1) as usize];
        let mut acc: f64 = (-(half as isize)..=half as isize).map(at).sum();
        out[[l, 0]] = acc / window as f64;
        for i in 1..t as isize {
            acc += at(i + half as isize) - at(i - 1 - half as isize);
            out[[l, i as usize]] = acc / window as f64;
        }
    }
    Ok(out)
}
