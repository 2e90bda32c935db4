//! Metrics, TOPSIS model selection and report files.

pub mod metrics;
pub mod report;
pub mod topsis;

pub use metrics::{classification_metrics, regression_metrics, MetricReport};
pub use topsis::{topsis, Criterion, DecisionMatrix, Direction, TopsisResult};
