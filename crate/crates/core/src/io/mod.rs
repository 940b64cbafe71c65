//! Run configuration files, CSV readers and writers, model checkpoints and
//! multi-seed comparison reports.

mod checkpoint;
mod config;
mod report;
mod tables;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use config::{load_config, parse_config, DataSource, RunConfig, CONFIG_KEYS};
pub use report::{quantile, ComparisonReport, ComparisonRow, Summary};
pub use tables::{
    load_csv_dataset, metrics_csv, read_metrics_csv, write_csv_dataset, write_metrics_csv, MetricsRow, METRICS_HEADER,
};
