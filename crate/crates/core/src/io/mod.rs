//! Run configuration, data ingestion and the CSV file formats.

mod config;
pub mod files;
mod ingest;

pub use config::{DataConfig, ForecastConfig, RunConfig, SimulateConfig};
pub use ingest::{
    ingest_gauges, ingest_radar_polar, observation_set, z_to_rate, GaugeMeta, GaugeRecord,
    GaugeSeries, GriddedRates, PolarRadarRecord, RadarGeometry,
};
