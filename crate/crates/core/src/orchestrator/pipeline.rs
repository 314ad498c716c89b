//! The measurement pipeline: idle baseline, then for every sequence ×
//! resolution × codec × crf cell: prepare, dry-run, duplicate, encode and
//! decode under all live meters.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::align::{measure_idle_baseline, AlignError};
use crate::dataset::{
    trace_file_name, write_trace_file, CellFailure, Dataset, DatasetError, IdleBaseline,
    MeasurementRow, DRY_SUFFIX,
};
use crate::job::{Codec, Crf, JobParams, JobRecord, Process, Resolution};
use crate::reliability::{plan_duplication, run_until_reliable, ReliableRun, RunError};
use crate::sources::{Meter, SourceError};

use super::command::{
    build_decode_command, build_encode_command, build_prepare_commands, Workload,
};
use super::config::{ConfigError, PipelineConfig, SequenceSpec};
use super::exec::{extract_bitrate, run_job, Executor, JobSpec, RunJobError};

/// Subdirectory of the output directory holding prepared inputs and encodes.
pub const WORK_DIR: &str = "work";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("output directory {}: {source}", path.display())]
    OutputDir {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("idle baseline, meter {meter}: {source}")]
    IdleSampler { meter: String, source: SourceError },
    #[error("idle baseline, meter {meter}: {source}")]
    Idle { meter: String, source: AlignError },
}

/// Job id stem shared by a cell's encode and decode jobs.
pub fn cell_id(sequence_id: &str, resolution: Resolution, codec: Codec, crf: Crf) -> String {
    format!("{sequence_id}_{resolution}_{codec}_crf{crf}", crf = crf.get())
}

pub fn job_id(cell: &str, process: Process) -> String {
    match process {
        Process::Encode => format!("{cell}_enc"),
        Process::Decode => format!("{cell}_dec"),
        Process::Idle => format!("{cell}_idle"),
    }
}

struct Cell<'a> {
    seq: &'a SequenceSpec,
    resolution: Resolution,
    codec: Codec,
    crf: Crf,
    id: String,
}

impl Cell<'_> {
    fn failure(&self, stage: &str, error: impl ToString) -> CellFailure {
        CellFailure {
            sequence_id: self.seq.sequence_id.clone(),
            resolution: self.resolution.to_string(),
            codec: self.codec,
            crf: self.crf.get(),
            stage: stage.into(),
            error: error.to_string(),
        }
    }
}

struct Driver<'a> {
    config: &'a PipelineConfig,
    executor: &'a mut dyn Executor,
    meters: &'a mut [Box<dyn Meter>],
    out: PathBuf,
    work: PathBuf,
    dataset: Dataset,
    prepared: HashSet<PathBuf>,
    /// Settle time around each sampled job so traces bracket the window.
    lead: f64,
    /// Coarsest meter interval; sizes duplication.
    plan_interval: f64,
}

/// Runs the whole pipeline and writes the dataset to `config.output_dir`.
///
/// `meters` are the live meters; offline meters listed in the config are
/// recorded in `meters.json` and ingested later. Per-cell failures are
/// recorded and the pipeline moves on to the next cell.
pub fn run_pipeline(
    config: &PipelineConfig,
    executor: &mut dyn Executor,
    meters: &mut [Box<dyn Meter>],
) -> Result<Dataset, PipelineError> {
    config.validate()?;
    let out = config.output_dir.clone();
    let work = out.join(WORK_DIR);
    fs::create_dir_all(&work).map_err(|source| PipelineError::OutputDir {
        path: work.clone(),
        source,
    })?;
    let lead = meters
        .iter()
        .map(|m| m.spec().nominal_interval)
        .fold(0.0, f64::max);
    let plan_interval = config
        .meters
        .iter()
        .map(|m| m.nominal_interval)
        .fold(0.0, f64::max);
    let mut meter_specs = config.meters.clone();
    for m in meters.iter() {
        if !meter_specs.iter().any(|s| s.meter_id == m.spec().meter_id) {
            meter_specs.push(m.spec().clone());
        }
    }
    let mut driver = Driver {
        config,
        executor,
        meters,
        out,
        work,
        dataset: Dataset {
            meters: meter_specs,
            ..Default::default()
        },
        prepared: HashSet::new(),
        lead,
        plan_interval,
    };
    driver.idle_baseline()?;
    driver.dataset.save(&driver.out)?;

    for seq in &config.sequences {
        for &resolution in &config.resolutions {
            for &codec in &config.codecs {
                for &crf in &config.crf_set {
                    let cell = Cell {
                        seq,
                        resolution,
                        codec,
                        crf,
                        id: cell_id(&seq.sequence_id, resolution, codec, crf),
                    };
                    if let Err(f) = driver.run_cell(&cell)? {
                        log::warn!("cell {} failed at {}: {}", cell.id, f.stage, f.error);
                        driver.dataset.failures.push(f);
                    }
                    driver.dataset.save(&driver.out)?;
                }
            }
        }
    }
    Ok(driver.dataset)
}

impl Driver<'_> {
    fn idle_baseline(&mut self) -> Result<(), PipelineError> {
        if self.meters.is_empty() {
            return Ok(());
        }
        for i in 0..self.meters.len() {
            if let Err(source) = self.meters[i].start() {
                for m in &mut self.meters[..i] {
                    let _ = m.stop();
                }
                return Err(PipelineError::IdleSampler {
                    meter: self.meters[i].spec().meter_id.clone(),
                    source,
                });
            }
        }
        self.executor.settle(self.config.idle_duration);
        let mut traces = Vec::new();
        let mut first_err = None;
        for m in self.meters.iter_mut() {
            match m.stop() {
                Ok(t) => traces.push(t),
                Err(source) => {
                    first_err.get_or_insert(PipelineError::IdleSampler {
                        meter: m.spec().meter_id.clone(),
                        source,
                    });
                }
            }
        }
        if let Some(e) = first_err {
            return Err(e);
        }
        for trace in traces {
            let idle_w = measure_idle_baseline(&trace).map_err(|source| PipelineError::Idle {
                meter: trace.meter_id.clone(),
                source,
            })?;
            write_trace_file(
                &self.out.join(trace_file_name(&trace.meter_id, "idle")),
                &trace,
            )?;
            self.dataset.idle.push(IdleBaseline {
                meter_id: trace.meter_id.clone(),
                idle_w,
                n_samples: trace.len(),
            });
        }
        Ok(())
    }

    /// Makes sure the input for (sequence, resolution, k) exists.
    fn prepare(&mut self, cell: &Cell, k: u32) -> Result<PathBuf, String> {
        let plan = build_prepare_commands(
            &self.config.encoder_binary,
            cell.seq,
            cell.resolution,
            k,
            &self.work,
        )
        .map_err(|e| e.to_string())?;
        for cmd in &plan.commands {
            let target = cmd.output.clone().unwrap_or_default();
            if self.prepared.contains(&target) {
                continue;
            }
            let ex = self.executor.execute(cmd).map_err(|e| e.to_string())?;
            if ex.exit_status != 0 {
                return Err(format!(
                    "preparing {} exited with status {}",
                    self.relative(&target),
                    ex.exit_status
                ));
            }
            self.prepared.insert(target);
        }
        Ok(plan.input)
    }

    fn relative(&self, p: &Path) -> String {
        p.strip_prefix(&self.out)
            .unwrap_or(p)
            .display()
            .to_string()
    }

    /// Error text with the output directory elided, so datasets written to
    /// different directories stay identical.
    fn scrub(&self, e: impl ToString) -> String {
        let text = e.to_string();
        let prefix = self.out.display().to_string();
        if prefix.is_empty() {
            text
        } else {
            text.replace(&format!("{prefix}/"), "")
        }
    }

    fn encode_spec(
        &self,
        cell: &Cell,
        params: &JobParams,
        input: &Path,
        output: &Path,
        id: String,
    ) -> Result<JobSpec, String> {
        let command = build_encode_command(&self.config.encoder_binary, params, input, output)
            .map_err(|e| e.to_string())?
            .with_workload(Workload {
                sequence_id: cell.seq.sequence_id.clone(),
                params: params.clone(),
                media_duration: cell.seq.duration * f64::from(params.duplication_factor()),
            });
        Ok(JobSpec {
            job_id: id,
            sequence_id: cell.seq.sequence_id.clone(),
            params: params.clone(),
            command,
        })
    }

    fn decode_spec(
        &self,
        cell: &Cell,
        params: &JobParams,
        encoded: &Path,
        id: String,
    ) -> Result<JobSpec, String> {
        let params = params.clone().with_process(Process::Decode);
        let command = build_decode_command(&self.config.encoder_binary, encoded)
            .map_err(|e| self.scrub(e))?
            .with_workload(Workload {
                sequence_id: cell.seq.sequence_id.clone(),
                params: params.clone(),
                media_duration: cell.seq.duration * f64::from(params.duplication_factor()),
            });
        Ok(JobSpec {
            job_id: id,
            sequence_id: cell.seq.sequence_id.clone(),
            params,
            command,
        })
    }

    /// Unsampled single-copy run; returns its duration.
    fn dry_run(&mut self, job: &JobSpec) -> Result<f64, String> {
        match run_job(job, 0, self.executor) {
            Ok(record) => {
                let d = record.duration();
                self.dataset.records.push(record);
                Ok(d)
            }
            Err(RunJobError::Failed(record)) => {
                let msg = format!("exited with status {}", record.exit_status);
                self.dataset.records.push(*record);
                Err(msg)
            }
            Err(e) => Err(self.scrub(e)),
        }
    }

    fn measure(&mut self, job: &JobSpec) -> Result<ReliableRun, String> {
        match run_until_reliable(
            job,
            self.executor,
            self.meters,
            &self.config.reliability,
            self.lead,
        ) {
            Ok(run) => Ok(run),
            Err(RunError::Job {
                repetition,
                source: RunJobError::Failed(record),
            }) => {
                let msg = format!(
                    "repetition {repetition} exited with status {}",
                    record.exit_status
                );
                self.dataset.records.push(*record);
                Err(msg)
            }
            Err(e) => Err(self.scrub(e)),
        }
    }

    fn persist(&mut self, run: ReliableRun, bitrate: Option<f64>) -> Result<(), DatasetError> {
        for trace in &run.traces {
            let job_id = &run.records[0].job_id;
            write_trace_file(&self.out.join(trace_file_name(&trace.meter_id, job_id)), trace)?;
        }
        let params = &run.records[0].params;
        for m in run.measurements {
            self.dataset.measurements.push(MeasurementRow {
                job_id: m.job_id,
                meter_id: m.meter_id,
                process: params.process,
                codec: params.codec,
                width: params.resolution.width(),
                height: params.resolution.height(),
                fps: params.fps.get(),
                crf: params.crf.get(),
                energy_j: m.energy,
                n_samples: m.n_samples,
                mean_w: m.mean_power,
                std_w: m.std_power,
                reliable: m.reliable,
                bitrate_kbps: bitrate,
            });
        }
        self.dataset.records.extend(run.records);
        Ok(())
    }

    /// Outer error aborts the pipeline; inner error is a cell failure.
    fn run_cell(&mut self, cell: &Cell) -> Result<Result<(), CellFailure>, PipelineError> {
        let base = match JobParams::new(
            cell.codec,
            Process::Encode,
            cell.resolution,
            cell.seq.fps,
            cell.crf,
            cell.seq.pixel_format.clone(),
            1,
        ) {
            Ok(p) => p,
            Err(e) => return Ok(Err(cell.failure("params", e))),
        };

        // duration estimate from one unsampled copy of each job
        let input = match self.prepare(cell, 1) {
            Ok(p) => p,
            Err(e) => return Ok(Err(cell.failure("prepare", self.scrub(e)))),
        };
        let enc_id = job_id(&cell.id, Process::Encode);
        let dec_id = job_id(&cell.id, Process::Decode);
        let dry_out = self.work.join(format!("{}{DRY_SUFFIX}.mp4", cell.id));
        let estimate = self
            .encode_spec(cell, &base, &input, &dry_out, format!("{enc_id}{DRY_SUFFIX}"))
            .and_then(|job| self.dry_run(&job))
            .and_then(|enc| {
                let job =
                    self.decode_spec(cell, &base, &dry_out, format!("{dec_id}{DRY_SUFFIX}"))?;
                Ok((enc, self.dry_run(&job)?))
            });
        let (est_enc, est_dec) = match estimate {
            Ok(e) => e,
            Err(e) => return Ok(Err(cell.failure("dry_run", e))),
        };
        let n_min = self.config.reliability.n_min;
        let k = match (
            plan_duplication(est_enc, self.plan_interval, n_min),
            plan_duplication(est_dec, self.plan_interval, n_min),
        ) {
            (Ok(a), Ok(b)) => a.max(b),
            (Err(e), _) | (_, Err(e)) => return Ok(Err(cell.failure("plan", e))),
        };
        let params = match base.with_duplication(k) {
            Ok(p) => p,
            Err(e) => return Ok(Err(cell.failure("plan", e))),
        };
        let input = match self.prepare(cell, k) {
            Ok(p) => p,
            Err(e) => return Ok(Err(cell.failure("prepare", self.scrub(e)))),
        };

        let encoded = self.work.join(format!("{}.mp4", cell.id));
        let run = match self
            .encode_spec(cell, &params, &input, &encoded, enc_id)
            .and_then(|job| self.measure(&job))
        {
            Ok(r) => r,
            Err(e) => return Ok(Err(cell.failure("encode", e))),
        };
        let bitrate = match bitrate_of(&run.records) {
            Ok(b) => b,
            Err(e) => return Ok(Err(cell.failure("bitrate", e))),
        };
        self.persist(run, Some(bitrate))?;

        let run = match self
            .decode_spec(cell, &params, &encoded, dec_id)
            .and_then(|job| self.measure(&job))
        {
            Ok(r) => r,
            Err(e) => return Ok(Err(cell.failure("decode", e))),
        };
        self.persist(run, Some(bitrate))?;
        Ok(Ok(()))
    }
}

/// Bitrate from the last successful encode repetition.
fn bitrate_of(records: &[JobRecord]) -> Result<f64, String> {
    let last = records.last().ok_or("no encode record")?;
    let media = last.media_duration.ok_or("encode record lacks a media duration")?;
    extract_bitrate(last, media).map_err(|e| e.to_string())
}
