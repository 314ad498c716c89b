//! On-disk measurement dataset: a flat directory of CSV and JSON-lines files.
//!
//! ```text
//! meters.json               meter specs, in configuration order
//! jobs.jsonl                one JobRecord per execution (dry runs end in `_dry`)
//! measurements.csv          one row per (job, meter)
//! idle.csv                  idle baseline per meter
//! failures.jsonl            cells that did not complete
//! trace_<meter>_<job>.csv   samples behind each measurement
//! ```

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::job::{read_jsonl, write_jsonl, Codec, JobRecord, JsonlError, Process};
use crate::trace::{MeterSpec, PowerTrace, TraceCsvError};

pub const METERS_FILE: &str = "meters.json";
pub const JOBS_FILE: &str = "jobs.jsonl";
pub const MEASUREMENTS_FILE: &str = "measurements.csv";
pub const IDLE_FILE: &str = "idle.csv";
pub const FAILURES_FILE: &str = "failures.jsonl";

pub const MEASUREMENT_COLUMNS: &[&str] = &[
    "job_id",
    "meter_id",
    "process",
    "codec",
    "width",
    "height",
    "fps",
    "crf",
    "energy_j",
    "n_samples",
    "mean_w",
    "std_w",
    "reliable",
    "bitrate_kbps",
];
pub const IDLE_COLUMNS: &[&str] = &["meter_id", "idle_w", "n_samples"];

/// Suffix marking unsampled duration-estimate runs in `jobs.jsonl`.
pub const DRY_SUFFIX: &str = "_dry";

/// One row of `measurements.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRow {
    pub job_id: String,
    pub meter_id: String,
    pub process: Process,
    pub codec: Codec,
    pub width: u32,
    pub height: u32,
    pub fps: u32,
    pub crf: u32,
    /// Joules per execution.
    pub energy_j: f64,
    pub n_samples: usize,
    pub mean_w: f64,
    pub std_w: f64,
    pub reliable: bool,
    /// Encoded bitrate of the cell; decode rows carry their encode's value.
    pub bitrate_kbps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdleBaseline {
    pub meter_id: String,
    pub idle_w: f64,
    pub n_samples: usize,
}

/// A cell that stopped at some stage; later cells still run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub sequence_id: String,
    pub resolution: String,
    pub codec: Codec,
    pub crf: u32,
    pub stage: String,
    pub error: String,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{}: {source}", path.display())]
    Jsonl { path: PathBuf, source: JsonlError },
    #[error("{}: {source}", path.display())]
    Trace {
        path: PathBuf,
        source: TraceCsvError,
    },
    #[error("unknown meter {0}")]
    UnknownMeter(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// File name of the trace behind a (meter, job) measurement.
pub fn trace_file_name(meter_id: &str, job_id: &str) -> String {
    format!("trace_{meter_id}_{job_id}.csv")
}

/// Everything in a dataset directory except the traces, which are loaded on
/// demand.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub meters: Vec<MeterSpec>,
    pub records: Vec<JobRecord>,
    pub measurements: Vec<MeasurementRow>,
    pub idle: Vec<IdleBaseline>,
    pub failures: Vec<CellFailure>,
}

impl Dataset {
    /// Loads a dataset; missing optional files read as empty.
    pub fn load(dir: &Path) -> Result<Self, DatasetError> {
        let meters_path = dir.join(METERS_FILE);
        let meters = {
            let f = File::open(&meters_path).map_err(io_err(&meters_path))?;
            serde_json::from_reader(BufReader::new(f)).map_err(|source| DatasetError::Json {
                path: meters_path.clone(),
                source,
            })?
        };
        Ok(Self {
            meters,
            records: read_jsonl_file(&dir.join(JOBS_FILE))?,
            measurements: read_csv_file(&dir.join(MEASUREMENTS_FILE))?,
            idle: read_csv_file(&dir.join(IDLE_FILE))?,
            failures: read_jsonl_file(&dir.join(FAILURES_FILE))?,
        })
    }

    /// Writes every file except traces.
    pub fn save(&self, dir: &Path) -> Result<(), DatasetError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let meters_path = dir.join(METERS_FILE);
        let mut text =
            serde_json::to_string_pretty(&self.meters).map_err(|source| DatasetError::Json {
                path: meters_path.clone(),
                source,
            })?;
        text.push('\n');
        fs::write(&meters_path, text).map_err(io_err(&meters_path))?;
        write_jsonl_file(&dir.join(JOBS_FILE), &self.records)?;
        write_csv_file(
            &dir.join(MEASUREMENTS_FILE),
            MEASUREMENT_COLUMNS,
            &self.measurements,
        )?;
        write_csv_file(&dir.join(IDLE_FILE), IDLE_COLUMNS, &self.idle)?;
        write_jsonl_file(&dir.join(FAILURES_FILE), &self.failures)
    }

    pub fn meter(&self, meter_id: &str) -> Option<&MeterSpec> {
        self.meters.iter().find(|m| m.meter_id == meter_id)
    }

    /// Records of measured executions, dry runs excluded.
    pub fn measured_records(&self) -> impl Iterator<Item = &JobRecord> {
        self.records.iter().filter(|r| !r.job_id.ends_with(DRY_SUFFIX))
    }

    pub fn idle_power(&self, meter_id: &str) -> Option<f64> {
        self.idle
            .iter()
            .find(|b| b.meter_id == meter_id)
            .map(|b| b.idle_w)
    }

    /// Reads the trace behind a measurement.
    pub fn load_trace(
        &self,
        dir: &Path,
        meter_id: &str,
        job_id: &str,
    ) -> Result<PowerTrace, DatasetError> {
        let spec = self
            .meter(meter_id)
            .ok_or_else(|| DatasetError::UnknownMeter(meter_id.to_string()))?;
        read_trace_file(
            &dir.join(trace_file_name(meter_id, job_id)),
            meter_id,
            spec.nominal_interval,
        )
    }
}

pub fn write_trace_file(path: &Path, trace: &PowerTrace) -> Result<(), DatasetError> {
    let f = File::create(path).map_err(io_err(path))?;
    trace
        .write_csv(BufWriter::new(f))
        .map_err(|source| DatasetError::Trace {
            path: path.to_path_buf(),
            source,
        })
}

pub fn read_trace_file(
    path: &Path,
    meter_id: &str,
    interval: f64,
) -> Result<PowerTrace, DatasetError> {
    let f = File::open(path).map_err(io_err(path))?;
    PowerTrace::read_csv(BufReader::new(f), meter_id, interval).map_err(|source| {
        DatasetError::Trace {
            path: path.to_path_buf(),
            source,
        }
    })
}

fn read_csv_file<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, DatasetError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let csv_err = |source| DatasetError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    rdr.deserialize().collect::<Result<_, _>>().map_err(csv_err)
}

/// Writes rows under `header`; the header is written even with no rows.
pub fn write_csv_file<T: Serialize>(
    path: &Path,
    header: &[&str],
    rows: &[T],
) -> Result<(), DatasetError> {
    let csv_err = |source| DatasetError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(f));
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

fn read_jsonl_file<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, DatasetError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let f = File::open(path).map_err(io_err(path))?;
    read_jsonl(BufReader::new(f)).map_err(|source| DatasetError::Jsonl {
        path: path.to_path_buf(),
        source,
    })
}

fn write_jsonl_file<T: Serialize>(path: &Path, items: &[T]) -> Result<(), DatasetError> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    write_jsonl(&mut w, items).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}
