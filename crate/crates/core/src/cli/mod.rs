//! Run configuration, evaluation runs, distillation export, corpus ingestion
//! and reports: everything the `errr` binary does, as a library.

mod config;
mod report;
mod runner;

pub use config::{
    ensure_writable, ConfigError, DatasetConfig, DenseConfig, EndpointConfig, FixtureConfig, Overrides,
    ResolvedDataset, RetrieverConfig, Roles, RunConfig,
};
pub use report::{build_report, read_transcripts, report_files, ReportError, ReportRow, ReportTable, StageTokens};
pub use runner::{
    export_distillation, ingest, run_dir, run_eval, Backends, DistillationPair, ExportOutcome, RunError, RunOutputs,
    RunSummary,
};
