//! Two-stage anomaly detection for cloud metric time series: a probabilistic
//! forecaster proposes candidates, an extreme-value tail model filters them.

pub mod api;
pub mod evt;
pub mod forecast;
pub mod ingest;
pub mod pipeline;
pub mod series;
pub mod stage1;

mod fsutil;

pub use fsutil::write_atomic;
