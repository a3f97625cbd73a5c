//! High-frequency retail position-opening analysis: holdings-snapshot and tick
//! ingestion, intraday/overnight panel construction, volatility
//! standardization, lagged group regressions with stock-clustered inference,
//! and the behavior proxies built on them.

pub mod behaviors;
pub mod calendar;
pub mod columnar;
pub mod config;
pub mod error;
pub mod grouping;
pub mod ingest;
pub mod panel;
pub mod pipeline;
pub mod regression;
pub mod report;
pub mod stats;
pub mod synth;
pub mod volatility;

pub use error::{Error, Result};
