//! Attaching an offline meter's log to a dataset after the jobs have run.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use thiserror::Error;

use crate::align::{extract_window, integrate_energy, mean_std};
use crate::dataset::{trace_file_name, write_trace_file, Dataset, DatasetError, MeasurementRow};
use crate::job::{JobRecord, Process};
use crate::reliability::{check_reliability, ReliabilityParams};
use crate::sources::{ingest_meter_csv, SourceError};
use crate::trace::{MeterSpec, PowerTrace};

use super::exec::extract_bitrate;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error("meter {0} already has a different spec in this dataset")]
    SpecConflict(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestSummary {
    pub measured: usize,
    /// Jobs whose windows the log does not cover.
    pub skipped: Vec<String>,
}

/// Reads a meter log, integrates every measured job window in `dir`, and
/// replaces that meter's rows in `measurements.csv`.
pub fn ingest_into_dataset<R: Read>(
    dir: &Path,
    spec: &MeterSpec,
    log: R,
    params: &ReliabilityParams,
) -> Result<IngestSummary, IngestError> {
    let mut dataset = Dataset::load(dir)?;
    match dataset.meter(&spec.meter_id) {
        Some(existing) if existing != spec => {
            return Err(IngestError::SpecConflict(spec.meter_id.clone()))
        }
        Some(_) => {}
        None => dataset.meters.push(spec.clone()),
    }
    let trace = ingest_meter_csv(log, spec)?;

    let mut jobs: BTreeMap<&str, Vec<&JobRecord>> = BTreeMap::new();
    let mut order = Vec::new();
    for r in dataset.measured_records().filter(|r| r.exit_status == 0) {
        let entry = jobs.entry(r.job_id.as_str()).or_default();
        if entry.is_empty() {
            order.push(r.job_id.as_str());
        }
        entry.push(r);
    }
    let bitrates = encode_bitrates(&dataset);

    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for job_id in order {
        let recs = &jobs[job_id];
        match measure_job(&trace, recs, spec, params) {
            Some((row, windows)) => {
                let cell = cell_of(job_id);
                rows.push(MeasurementRow {
                    bitrate_kbps: bitrates.get(cell).copied(),
                    ..row
                });
                write_trace_file(&dir.join(trace_file_name(&spec.meter_id, job_id)), &windows)?;
            }
            None => {
                log::warn!("meter {}: log does not cover job {job_id}", spec.meter_id);
                skipped.push(job_id.to_string());
            }
        }
    }
    let measured = rows.len();
    dataset.measurements.retain(|m| m.meter_id != spec.meter_id);
    dataset.measurements.extend(rows);
    dataset.save(dir)?;
    Ok(IngestSummary { measured, skipped })
}

/// Strips the `_enc` / `_dec` suffix of a job id.
fn cell_of(job_id: &str) -> &str {
    job_id
        .strip_suffix("_enc")
        .or_else(|| job_id.strip_suffix("_dec"))
        .unwrap_or(job_id)
}

fn encode_bitrates(dataset: &Dataset) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for r in dataset
        .measured_records()
        .filter(|r| r.exit_status == 0 && r.params.process == Process::Encode)
    {
        if let Some(b) = r.media_duration.and_then(|d| extract_bitrate(r, d).ok()) {
            out.insert(cell_of(&r.job_id).to_string(), b);
        }
    }
    out
}

fn measure_job(
    trace: &PowerTrace,
    recs: &[&JobRecord],
    spec: &MeterSpec,
    params: &ReliabilityParams,
) -> Option<(MeasurementRow, PowerTrace)> {
    let mut energies = Vec::with_capacity(recs.len());
    let mut powers = Vec::new();
    let mut pooled = PowerTrace::new(spec.meter_id.clone(), spec.nominal_interval);
    for r in recs {
        let w = extract_window(trace, r.start, r.end, spec.nominal_interval).ok()?;
        energies.push(integrate_energy(&w).ok()?.energy);
        powers.extend(w.powers());
        // back-to-back repetitions can share a boundary timestamp
        let from = w
            .samples
            .iter()
            .position(|s| pooled.last_timestamp().is_none_or(|t| s.timestamp > t))
            .unwrap_or(w.len());
        pooled.samples.extend_from_slice(&w.samples[from..]);
    }
    let n = powers.len();
    let (mean, std) = mean_std(powers.iter().copied());
    let reliable = n >= params.n_min
        && check_reliability(n, mean, std, params).is_ok_and(|c| c.satisfied);
    let p = &recs[0].params;
    let row = MeasurementRow {
        job_id: recs[0].job_id.clone(),
        meter_id: spec.meter_id.clone(),
        process: p.process,
        codec: p.codec,
        width: p.resolution.width(),
        height: p.resolution.height(),
        fps: p.fps.get(),
        crf: p.crf.get(),
        energy_j: energies.iter().sum::<f64>() / energies.len() as f64,
        n_samples: n,
        mean_w: mean,
        std_w: std,
        reliable,
        bitrate_kbps: None,
    };
    Some((row, pooled))
}
