//! Command construction, job execution and the end-to-end measurement
//! pipeline.

pub mod command;
pub mod config;
pub mod exec;
pub mod ingest;
pub mod pipeline;

pub use command::{
    build_decode_command, build_encode_command, build_prepare_commands, pixel_format_token,
    CommandError, JobCommand, PreparePlan, Workload,
};
pub use config::{parse_config, ConfigError, PipelineConfig, SequenceSpec, ENCODER_ENV};
pub use exec::{
    extract_bitrate, run_job, BitrateError, ExecError, Execution, Executor, JobSpec,
    ProcessExecutor, RunJobError,
};
pub use ingest::{ingest_into_dataset, IngestError, IngestSummary};
pub use pipeline::{cell_id, job_id, run_pipeline, PipelineError};
