//! Forecast metrics, the scenario harness and report files.

mod metrics;
mod predictions;
mod report;
mod scenario;
mod table;

pub use metrics::{mae, mape, rmse, score, Mape, StepScore, DEFAULT_MAPE_FLOOR};
pub use predictions::Predictions;
pub use report::{per_horizon_report, ReportFiles};
pub use scenario::{
    run_scenario, CheckpointStore, Method, ScenarioContext, ScenarioKind, ScenarioOutcome,
    ScenarioSpec, TrainingRun, Variant, ZERO_DAY_FRACTIONS,
};
pub use table::{CellKey, Metric, MetricTable, REPORTED_HORIZONS};
