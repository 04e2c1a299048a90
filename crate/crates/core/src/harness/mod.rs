//! Three-arm A/B experiment runner and offline analysis: impression log
//! I/O, metric computation with normalization against the random arm,
//! the replay estimator, and the binned fatigue reports.

mod experiment;
mod fatigue_report;
mod log;
mod metrics;
mod replay;

pub use experiment::{run_experiment, ExperimentOutput};
pub use fatigue_report::{fatigue_report, FatigueReport};
pub use log::{read_log, write_log, ArmId, ConversionType, ImpressionRecord};
pub use metrics::{compute_metrics, significance_test, ArmCounts, MetricsReport};
pub use replay::{replay_evaluate, ReplayEstimate};
