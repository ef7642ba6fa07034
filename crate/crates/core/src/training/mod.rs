//! Splitting, normalization, optimization, metrics and the training loop.

pub mod adam;
pub mod metrics;
pub mod norm;
pub mod split;
pub mod trainer;

pub use adam::Adam;
pub use metrics::{ha_baseline, ForecastReport, HorizonMetrics, MetricAccumulator, Metrics, MAPE_FLOOR};
pub use norm::{Normalization, ZScore};
pub use split::{chronological_split, gather_windows, slice_time, split_ranges, window_starts, Segment, SplitRanges};
pub use trainer::{
    evaluate, evaluate_ha, train, Batch, EpochLog, GraphConfig, Prepared, TrainConfig, TrainOutcome,
};
