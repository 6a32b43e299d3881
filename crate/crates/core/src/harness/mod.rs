//! Declarative experiments: configs, runs, sweeps and their CSV/JSON output.

mod config;
mod experiments;
mod record;
mod sweep;
mod train;

pub use config::{ExperimentConfig, ExperimentKind, MethodName, ModelSection, TaskSection, TheorySection, TrainSection};
pub use experiments::{run, ABLATION_VARIANTS};
pub use record::{
    emit, epochs_csv, format_f64, metric_columns, metrics_csv, table_csv, write_atomic, EpochRow, Format, RunRecord,
    SplitMetrics, Table, EPOCH_COLUMNS, KEY_COLUMNS, VERSION,
};
pub use sweep::{sweep, SweepResult};
