//! Fleet timeseries container, CSV persistence, and fleet graph construction.

mod adjacency;
mod csv_io;
mod series;

pub use adjacency::{
    build_correlation_adjacency, build_spatial_adjacency, build_spatial_adjacency_with,
    DistanceMetric, FleetGraph, GraphMeta, GraphMode,
};
pub use csv_io::{
    format_timestamp, load_fleet_csv, load_fleet_csv_column, parse_timestamp, write_fleet_csv,
    write_fleet_csv_column, POWER_COLUMN,
};
pub use series::{default_start, regular_grid, FleetSeries, SECONDS_PER_YEAR};
