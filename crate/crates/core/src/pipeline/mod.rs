//! Frame ingestion, the gate chain, whole-scan runs and agreement statistics.

mod agreement;
mod config;
mod gates;
mod record;
mod report;

pub use agreement::{
    agreement, compare, test_retest, AgreementStats, BlandAltmanRow, RetestStats, SubjectKey,
};
pub use config::{GateConfig, RunConfig};
pub use gates::{gate_chain, resolve_scale, Disposition, RejectReason, ScaleTracker};
pub use record::{
    ingest, parse_line, write_jsonl, AnnotationPayload, FrameRecord, Ingested, LineError, Payload,
};
pub use report::{
    ci_coverage, run, run_records, write_timeseries_csv, BiometricReport, Coverage,
    DispositionCounts, RunReport, TimePoint, TIMESERIES_HEADER,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("no overlapping measurements: {0}")]
    EmptyIntersection(String),
}
