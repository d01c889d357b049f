use chrono::{DateTime, Duration, TimeZone, Utc};
use ndarray::Array2;

use crate::error::{Error, Result};

/// Length of the PLR year in seconds. Leap days are ignored so that one year is
/// always a whole number of samples at the usual PV sampling intervals.
pub const SECONDS_PER_YEAR: f64 = 365.0 * 86_400.0;

/// A uniformly sampled multiseries over a fleet of nodes, one power channel per node.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetSeries {
    node_ids: Vec<String>,
    timestamps: Vec<DateTime<Utc>>,
    values: Array2<f64>,
    locations: Option<Array2<f64>>,
    samples_per_year: usize,
}

impl FleetSeries {
    /// Validates shapes and the timestamp grid, deriving `samples_per_year`
    /// from the sampling interval.
    pub fn new(
        node_ids: Vec<String>,
        timestamps: Vec<DateTime<Utc>>,
        values: Array2<f64>,
        locations: Option<Array2<f64>>,
    ) -> Result<Self> {
        let (n, t) = values.dim();
        if node_ids.len() != n {
            return Err(Error::shape("FleetSeries.values rows", node_ids.len(), n));
        }
        if timestamps.len() != t {
            return Err(Error::shape("FleetSeries.values cols", timestamps.len(), t));
        }
        if t < 2 {
            return Err(Error::TooShort(format!(
                "need at least 2 timestamps to derive a sampling interval, got {t}"
            )));
        }
        if let Some(loc) = &locations {
            if loc.dim() != (n, 2) {
                return Err(Error::shape("FleetSeries.locations", (n, 2), loc.dim()));
            }
        }
        let interval = interval_secs(&timestamps)?;
        let spy = (SECONDS_PER_YEAR / interval).round();
        if spy < 1.0 {
            return Err(Error::InvalidInput(format!(
                "sampling interval {interval}s is longer than a year"
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for id in &node_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate node id {id:?}")));
            }
        }
        Ok(Self {
            node_ids,
            timestamps,
            values,
            locations,
            samples_per_year: spy as usize,
        })
    }

    /// Builds a series on a regular grid starting at `start`. The interval is
    /// one year divided by `samples_per_year`, which must be a whole number of seconds.
    pub fn on_grid(
        node_ids: Vec<String>,
        start: DateTime<Utc>,
        samples_per_year: usize,
        values: Array2<f64>,
        locations: Option<Array2<f64>>,
    ) -> Result<Self> {
        let timestamps = regular_grid(start, samples_per_year, values.ncols())?;
        let series = Self::new(node_ids, timestamps, values, locations)?;
        debug_assert_eq!(series.samples_per_year, samples_per_year);
        Ok(series)
    }

    pub fn n_nodes(&self) -> usize {
        self.values.nrows()
    }

    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.ncols() == 0
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn timestamps(&self) -> &[DateTime<Utc>] {
        &self.timestamps
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn locations(&self) -> Option<&Array2<f64>> {
        self.locations.as_ref()
    }

    pub fn samples_per_year(&self) -> usize {
        self.samples_per_year
    }

    /// Same nodes, timestamps and locations, different values of identical shape.
    pub fn with_values(&self, values: Array2<f64>) -> Result<Self> {
        if values.dim() != self.values.dim() {
            return Err(Error::shape("FleetSeries::with_values", self.values.dim(), values.dim()));
        }
        Ok(Self {
            values,
            ..self.clone()
        })
    }
}

pub fn default_start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2010, 1, 1, 0, 0, 0).unwrap()
}

pub fn regular_grid(
    start: DateTime<Utc>,
    samples_per_year: usize,
    len: usize,
) -> Result<Vec<DateTime<Utc>>> {
    if samples_per_year == 0 {
        return Err(Error::InvalidInput("samples_per_year must be >= 1".into()));
    }
    let secs_per_year = SECONDS_PER_YEAR as i64;
    if secs_per_year % samples_per_year as i64 != 0 {
        return Err(Error::InvalidInput(format!(
            "samples_per_year {samples_per_year} does not divide a 365-day year into whole seconds"
        )));
    }
    let step = Duration::seconds(secs_per_year / samples_per_year as i64);
    Ok((0..len).map(|i| start + step * i as i32).collect())
}

fn interval_secs(timestamps: &[DateTime<Utc>]) -> Result<f64> {
    let secs = |a: &DateTime<Utc>, b: &DateTime<Utc>| {
        (*b - *a).num_milliseconds() as f64 / 1000.0
    };
    let interval = secs(&timestamps[0], &timestamps[1]);
    if interval <= 0.0 {
        return Err(Error::InvalidInput("timestamps must be strictly increasing".into()));
    }
    for (i, w) in timestamps.windows(2).enumerate() {
        let d = secs(&w[0], &w[1]);
        if (d - interval).abs() > 1e-6 * interval {
            return Err(Error::InvalidInput(format!(
                "non-uniform sampling at index {}: step {d}s vs {interval}s",
                i + 1
            )));
        }
    }
    Ok(interval)
}
