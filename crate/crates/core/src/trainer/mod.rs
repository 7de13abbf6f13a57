//! Optimization loop, data splits and result tables.

mod metrics;
mod report;
mod train;

pub use crate::datasets::split;
pub use metrics::{ClassificationReport, MetricsReport, RegressionReport};
pub use report::{
    classification_csv, classification_headers, classification_table, regression_csv, regression_table,
    sort_rows_by_arch, REGRESSION_HEADERS,
};
pub use train::{
    evaluate_classification, evaluate_regression, network_outputs, predictions, train, train_classical, train_network,
    EpochStats, FrameReader, History, Optimizer, RegressionPair, Sample, Target, TrainConfig, TrainOutcome,
};

#[cfg(test)]
mod tests;
