//! Job execution: the executor seam, the process-spawning executor, and
//! per-job records.

use std::fs;
use std::process::{Command, Stdio};
use std::time::Duration;

use thiserror::Error;

use crate::job::{JobParams, JobRecord, Process, RecordError};
use crate::sources::wall_clock_now;

use super::command::JobCommand;

/// Timing and outcome of one command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Execution {
    pub start: f64,
    pub end: f64,
    pub exit_status: i32,
    pub output_size: Option<u64>,
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("spawning {program}: {source}")]
    Spawn {
        program: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Other(String),
}

/// Runs commands and lets time pass. Timestamps come from the same clock the
/// meters use.
pub trait Executor {
    fn execute(&mut self, command: &JobCommand) -> Result<Execution, ExecError>;

    /// Waits `seconds` with no job running.
    fn settle(&mut self, seconds: f64);
}

/// Spawns real processes; output and diagnostics are discarded.
#[derive(Debug, Default)]
pub struct ProcessExecutor;

impl Executor for ProcessExecutor {
    fn execute(&mut self, command: &JobCommand) -> Result<Execution, ExecError> {
        if let Some(out) = &command.output {
            // the encoder would otherwise prompt before overwriting
            let _ = fs::remove_file(out);
        }
        let mut cmd = Command::new(&command.program);
        cmd.args(&command.args)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null());
        let start = wall_clock_now();
        let status = cmd
            .spawn()
            .and_then(|mut child| child.wait())
            .map_err(|source| ExecError::Spawn {
                program: command.program.display().to_string(),
                source,
            })?;
        let end = wall_clock_now();
        let output_size = command
            .output
            .as_ref()
            .and_then(|p| fs::metadata(p).ok())
            .map(|m| m.len());
        Ok(Execution {
            start,
            end,
            exit_status: status.code().unwrap_or(-1),
            output_size,
        })
    }

    fn settle(&mut self, seconds: f64) {
        if seconds > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(seconds));
        }
    }
}

/// A benchmark job ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct JobSpec {
    pub job_id: String,
    pub sequence_id: String,
    pub params: JobParams,
    pub command: JobCommand,
}

#[derive(Debug, Error)]
pub enum RunJobError {
    #[error("job {} exited with status {}", .0.job_id, .0.exit_status)]
    Failed(Box<JobRecord>),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Record(#[from] RecordError),
}

/// Executes `job` once and records its window and outcome.
pub fn run_job(
    job: &JobSpec,
    repetition_index: u32,
    executor: &mut dyn Executor,
) -> Result<JobRecord, RunJobError> {
    let ex = executor.execute(&job.command)?;
    let record = JobRecord {
        job_id: job.job_id.clone(),
        params: job.params.clone(),
        start: ex.start,
        end: ex.end,
        exit_status: ex.exit_status,
        output_size: if job.params.process == Process::Encode {
            ex.output_size
        } else {
            None
        },
        repetition_index,
        sequence_id: job.sequence_id.clone(),
        media_duration: job.command.workload.as_ref().map(|w| w.media_duration),
    };
    if record.exit_status != 0 {
        return Err(RunJobError::Failed(Box::new(record)));
    }
    record.validate()?;
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BitrateError {
    #[error("record has no positive output size")]
    NoOutput,
    #[error("media duration must be > 0")]
    Duration,
}

/// Encoded bitrate in kilobits per second.
pub fn extract_bitrate(record: &JobRecord, media_duration: f64) -> Result<f64, BitrateError> {
    if !(media_duration > 0.0) {
        return Err(BitrateError::Duration);
    }
    match record.output_size {
        Some(n) if n > 0 => Ok(n as f64 * 8.0 / media_duration / 1000.0),
        _ => Err(BitrateError::NoOutput),
    }
}
