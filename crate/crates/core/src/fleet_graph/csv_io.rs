use std::collections::HashMap;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, SecondsFormat, Utc};
use ndarray::Array2;

use super::FleetSeries;
use crate::error::{Error, Result};

pub const POWER_COLUMN: &str = "power";

struct NodeRows {
    samples: Vec<(DateTime<Utc>, f64, usize)>,
    location: Option<(f64, f64)>,
}

pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t.and_utc());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .map(|d| d.and_hms_opt(0, 0, 0).unwrap().and_utc())
}

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Loads `system_id,timestamp,power[,lat,lon]`.
pub fn load_fleet_csv(path: &Path) -> Result<FleetSeries> {
    load_fleet_csv_column(path, POWER_COLUMN)
}

/// Loads a fleet-schema file whose value column is named `value_column`.
pub fn load_fleet_csv_column(path: &Path, value_column: &str) -> Result<FleetSeries> {
    let load_err = |row: usize, message: String| Error::Load {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| load_err(0, e.to_string()))?;
    let headers = reader.headers().map_err(|e| load_err(1, e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let id_col = col("system_id").ok_or_else(|| load_err(1, "missing column system_id".into()))?;
    let ts_col = col("timestamp").ok_or_else(|| load_err(1, "missing column timestamp".into()))?;
    let val_col =
        col(value_column).ok_or_else(|| load_err(1, format!("missing column {value_column}")))?;
    let lat_col = col("lat");
    let lon_col = col("lon");
    if lat_col.is_some() != lon_col.is_some() {
        return Err(load_err(1, "lat and lon must appear together".into()));
    }

    let mut order: Vec<String> = Vec::new();
    let mut nodes: HashMap<String, NodeRows> = HashMap::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| load_err(row, e.to_string()))?;
        let field = |c: usize| record.get(c).unwrap_or("");
        let id = field(id_col).to_string();
        if id.is_empty() {
            return Err(load_err(row, "empty system_id".into()));
        }
        let ts = parse_timestamp(field(ts_col))
            .ok_or_else(|| load_err(row, format!("unparsable timestamp {:?}", field(ts_col))))?;
        let value: f64 = field(val_col)
            .parse()
            .map_err(|_| load_err(row, format!("unparsable {value_column} {:?}", field(val_col))))?;
        let location = match (lat_col, lon_col) {
            (Some(a), Some(b)) if !field(a).is_empty() || !field(b).is_empty() => {
                let lat: f64 = field(a)
                    .parse()
                    .map_err(|_| load_err(row, format!("unparsable lat {:?}", field(a))))?;
                let lon: f64 = field(b)
                    .parse()
                    .map_err(|_| load_err(row, format!("unparsable lon {:?}", field(b))))?;
                Some((lat, lon))
            }
            _ => None,
        };
        let entry = nodes.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            NodeRows {
                samples: Vec::new(),
                location,
            }
        });
        if entry.location != location {
            return Err(load_err(row, format!("location of {id:?} changes between rows")));
        }
        entry.samples.push((ts, value, row));
    }
    if order.is_empty() {
        return Err(load_err(1, "no data rows".into()));
    }

    for id in &order {
        let rows = nodes.get_mut(id).unwrap();
        rows.samples.sort_by_key(|s| s.0);
        if let Some(w) = rows.samples.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(load_err(w[1].2, format!("duplicate timestamp for {id:?}")));
        }
    }
    let grid: Vec<DateTime<Utc>> = nodes[&order[0]].samples.iter().map(|s| s.0).collect();
    let t = grid.len();
    let mut values = Array2::<f64>::zeros((order.len(), t));
    for (l, id) in order.iter().enumerate() {
        let rows = &nodes[id];
        let same_grid = rows.samples.len() == t && rows.samples.iter().zip(&grid).all(|(s, g)| s.0 == *g);
        if !same_grid {
            let row = rows.samples.last().map(|s| s.2).unwrap_or(0);
            return Err(load_err(
                row,
                format!(
                    "ragged grid: node {id:?} has {} timestamps not matching the {t} of {:?}",
                    rows.samples.len(),
                    order[0]
                ),
            ));
        }
        for (j, s) in rows.samples.iter().enumerate() {
            values[[l, j]] = s.1;
        }
    }
    let has_loc: Vec<bool> = order.iter().map(|id| nodes[id].location.is_some()).collect();
    let locations = if has_loc.iter().all(|&b| b) {
        let mut loc = Array2::zeros((order.len(), 2));
        for (l, id) in order.iter().enumerate() {
            let (lat, lon) = nodes[id].location.unwrap();
            loc[[l, 0]] = lat;
            loc[[l, 1]] = lon;
        }
        Some(loc)
    } else if has_loc.iter().any(|&b| b) {
        let missing = &order[has_loc.iter().position(|&b| !b).unwrap()];
        return Err(load_err(1, format!("node {missing:?} has no location while others do")));
    } else {
        None
    };
    FleetSeries::new(order, grid, values, locations).map_err(|e| load_err(1, e.to_string()))
}

pub fn write_fleet_csv(series: &FleetSeries, path: &Path) -> Result<()> {
    write_fleet_csv_column(series, path, POWER_COLUMN)
}

/// Writes the fleet schema with the value column named `value_column`; rows are
/// grouped by node and sorted by timestamp.
pub fn write_fleet_csv_column(series: &FleetSeries, path: &Path, value_column: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let with_loc = series.locations().is_some();
    if with_loc {
        w.write_record(["system_id", "timestamp", value_column, "lat", "lon"])?;
    } else {
        w.write_record(["system_id", "timestamp", value_column])?;
    }
    let stamps: Vec<String> = series.timestamps().iter().map(format_timestamp).collect();
    for (l, id) in series.node_ids().iter().enumerate() {
        let loc = series
            .locations()
            .map(|loc| (loc[[l, 0]].to_string(), loc[[l, 1]].to_string()));
        for (j, ts) in stamps.iter().enumerate() {
            let v = series.values()[[l, j]].to_string();
            match &loc {
                Some((lat, lon)) => w.write_record([id.as_str(), ts, &v, lat, lon])?,
                None => w.write_record([id.as_str(), ts, &v])?,
            }
        }
    }
    w.flush()?;
    Ok(())
}
