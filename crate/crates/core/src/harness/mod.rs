//! Monte Carlo experiments, CSV input and output.

pub mod config;
pub mod io;
pub mod montecarlo;

pub use config::{Estimator, ExperimentConfig};
pub use io::{
    export_effects, export_fit, export_sample, export_summary, ingest_csv, ingest_reader, write_effects, write_fit,
    write_replications, write_sample, write_summary, CsvSchema,
};
pub use montecarlo::{
    run_estimators, run_montecarlo, run_replication, DatasetStats, EffectSummary, EstimatorRun, McSummary, RepResult,
    THREADS_ENV,
};
