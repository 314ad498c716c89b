//! Result files: the correlation table, fitted models, scatter data, energy
//! decomposition and a plain-text summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::align::decompose_energy;
use crate::analysis::{CorrelationReport, MeterPair, GROUPS};
use crate::dataset::{write_csv_file, Dataset, DatasetError};
use crate::job::{Codec, Process, Resolution};

pub const TABLE_FILE: &str = "table2.csv";
pub const FITS_FILE: &str = "fits.csv";
pub const DECOMPOSITION_FILE: &str = "decomposition.csv";
pub const SUMMARY_FILE: &str = "summary.txt";

pub fn scatter_file(process: Process) -> String {
    format!("scatter_{process}.csv")
}

#[derive(Serialize)]
struct TableRow {
    codec: Codec,
    process: Process,
    pcc: f64,
    scc: f64,
    kcc: f64,
    r2: f64,
    epsilon: f64,
}
const TABLE_COLUMNS: &[&str] = &["codec", "process", "pcc", "scc", "kcc", "r2", "epsilon"];

#[derive(Serialize)]
struct FitRow {
    codec: Codec,
    process: Process,
    slope: f64,
    intercept: f64,
    r2: f64,
    epsilon: f64,
    n_points: usize,
}
const FIT_COLUMNS: &[&str] = &[
    "codec",
    "process",
    "slope",
    "intercept",
    "r2",
    "epsilon",
    "n_points",
];

#[derive(Serialize)]
struct ScatterRow<'a> {
    bitrate_kbps: f64,
    energy_j: f64,
    codec: Codec,
    resolution: &'a str,
    meter: &'a str,
}
const SCATTER_COLUMNS: &[&str] = &["bitrate_kbps", "energy_j", "codec", "resolution", "meter"];

#[derive(Serialize)]
struct DecompositionRow<'a> {
    job_id: &'a str,
    codec: Codec,
    process: Process,
    resolution: &'a str,
    crf: u32,
    duration_s: f64,
    e_total: f64,
    e_proc: f64,
    e_strg: f64,
    e_x: f64,
    residual_negative: bool,
}
const DECOMPOSITION_COLUMNS: &[&str] = &[
    "job_id",
    "codec",
    "process",
    "resolution",
    "crf",
    "duration_s",
    "e_total",
    "e_proc",
    "e_strg",
    "e_x",
    "residual_negative",
];

/// Writes the correlation table and the fitted models; returns the paths.
pub fn write_analysis(
    dir: &Path,
    reports: &[CorrelationReport],
) -> Result<Vec<PathBuf>, DatasetError> {
    let table: Vec<TableRow> = reports
        .iter()
        .map(|r| TableRow {
            codec: r.codec,
            process: r.process,
            pcc: r.pcc,
            scc: r.scc,
            kcc: r.kcc,
            r2: r.fit.r2,
            epsilon: r.fit.epsilon,
        })
        .collect();
    let fits: Vec<FitRow> = reports
        .iter()
        .map(|r| FitRow {
            codec: r.codec,
            process: r.process,
            slope: r.fit.slope,
            intercept: r.fit.intercept,
            r2: r.fit.r2,
            epsilon: r.fit.epsilon,
            n_points: r.fit.n_points,
        })
        .collect();
    let table_path = dir.join(TABLE_FILE);
    let fits_path = dir.join(FITS_FILE);
    write_csv_file(&table_path, TABLE_COLUMNS, &table)?;
    write_csv_file(&fits_path, FIT_COLUMNS, &fits)?;
    Ok(vec![table_path, fits_path])
}

fn resolution_label(width: u32, height: u32) -> String {
    Resolution::from_dims(width, height)
        .map(|r| r.label().to_string())
        .unwrap_or_else(|_| format!("{width}x{height}"))
}

/// Writes scatter data, the decomposition and the summary; returns the paths.
pub fn write_report(
    dir: &Path,
    dataset: &Dataset,
    meters: &MeterPair,
    reports: &[CorrelationReport],
    warnings: &[String],
) -> Result<Vec<PathBuf>, DatasetError> {
    let mut written = Vec::new();
    let labels: Vec<String> = dataset
        .measurements
        .iter()
        .map(|m| resolution_label(m.width, m.height))
        .collect();

    for process in [Process::Encode, Process::Decode] {
        let rows: Vec<ScatterRow> = dataset
            .measurements
            .iter()
            .zip(&labels)
            .filter(|(m, _)| m.process == process)
            .filter_map(|(m, label)| {
                Some(ScatterRow {
                    bitrate_kbps: m.bitrate_kbps?,
                    energy_j: m.energy_j,
                    codec: m.codec,
                    resolution: label,
                    meter: &m.meter_id,
                })
            })
            .collect();
        let path = dir.join(scatter_file(process));
        write_csv_file(&path, SCATTER_COLUMNS, &rows)?;
        written.push(path);
    }

    let (decomposition, mut notes) = decomposition_rows(dataset, meters, &labels);
    let path = dir.join(DECOMPOSITION_FILE);
    write_csv_file(&path, DECOMPOSITION_COLUMNS, &decomposition)?;
    written.push(path);

    notes.extend(warnings.iter().cloned());
    let path = dir.join(SUMMARY_FILE);
    fs::write(&path, summary_text(dataset, meters, reports, &notes)).map_err(|source| {
        DatasetError::Io {
            path: path.clone(),
            source,
        }
    })?;
    written.push(path);
    Ok(written)
}

fn mean_durations(dataset: &Dataset) -> BTreeMap<&str, f64> {
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for r in dataset.measured_records().filter(|r| r.exit_status == 0) {
        let e = acc.entry(r.job_id.as_str()).or_default();
        e.0 += r.duration();
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(k, (sum, n))| (k, sum / n as f64))
        .collect()
}

fn decomposition_rows<'a>(
    dataset: &'a Dataset,
    meters: &MeterPair,
    labels: &'a [String],
) -> (Vec<DecompositionRow<'a>>, Vec<String>) {
    let mut notes = Vec::new();
    let Some(idle) = dataset.idle_power(&meters.hw) else {
        notes.push(format!(
            "no idle baseline for {}; decomposition skipped",
            meters.hw
        ));
        return (Vec::new(), notes);
    };
    let durations = mean_durations(dataset);
    let sw: BTreeMap<&str, f64> = dataset
        .measurements
        .iter()
        .filter(|m| m.meter_id == meters.sw)
        .map(|m| (m.job_id.as_str(), m.energy_j))
        .collect();
    let mut rows = Vec::new();
    for (m, label) in dataset.measurements.iter().zip(labels) {
        if m.meter_id != meters.hw {
            continue;
        }
        let (Some(&e_proc), Some(&duration)) =
            (sw.get(m.job_id.as_str()), durations.get(m.job_id.as_str()))
        else {
            continue;
        };
        match decompose_energy(m.energy_j, e_proc, idle, duration, m.process) {
            Ok(d) => rows.push(DecompositionRow {
                job_id: &m.job_id,
                codec: m.codec,
                process: m.process,
                resolution: label,
                crf: m.crf,
                duration_s: duration,
                e_total: d.e_total,
                e_proc: d.e_proc,
                e_strg: d.e_strg,
                e_x: d.e_x,
                residual_negative: d.residual_negative,
            }),
            Err(e) => notes.push(format!("job {}: {e}", m.job_id)),
        }
    }
    (rows, notes)
}

fn summary_text(
    dataset: &Dataset,
    meters: &MeterPair,
    reports: &[CorrelationReport],
    notes: &[String],
) -> String {
    let mut s = String::new();
    let measured: Vec<_> = dataset
        .measured_records()
        .filter(|r| r.exit_status == 0)
        .collect();
    let _ = writeln!(s, "meters: wall {} / chip {}", meters.hw, meters.sw);
    let _ = writeln!(
        s,
        "executions: {}  measurements: {}  failed cells: {}",
        measured.len(),
        dataset.measurements.len(),
        dataset.failures.len()
    );
    let reliable = dataset.measurements.iter().filter(|m| m.reliable).count();
    let _ = writeln!(
        s,
        "reliable measurements: {reliable} of {}",
        dataset.measurements.len()
    );
    for b in &dataset.idle {
        let _ = writeln!(s, "idle {}: {:.3} W over {} samples", b.meter_id, b.idle_w, b.n_samples);
    }

    let _ = writeln!(s, "\nmean repetitions per job");
    for (codec, process) in GROUPS {
        let mut reps: BTreeMap<&str, u32> = BTreeMap::new();
        for r in measured
            .iter()
            .filter(|r| r.params.codec == codec && r.params.process == process)
        {
            *reps.entry(&r.job_id).or_default() += 1;
        }
        if reps.is_empty() {
            continue;
        }
        let mean = reps.values().map(|&n| f64::from(n)).sum::<f64>() / reps.len() as f64;
        let _ = writeln!(s, "  {codec} {process}: {mean:.2} over {} jobs", reps.len());
    }

    let _ = writeln!(s, "\ncorrelation of wall vs chip energy");
    let _ = writeln!(
        s,
        "  {:<6} {:<7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>9} {:>10}",
        "codec", "process", "PCC", "SCC", "KCC", "R2", "eps", "slope", "intercept"
    );
    for r in reports {
        let _ = writeln!(
            s,
            "  {:<6} {:<7} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>9.4} {:>10.3}",
            r.codec.to_string(),
            r.process.to_string(),
            r.pcc,
            r.scc,
            r.kcc,
            r.fit.r2,
            r.fit.epsilon,
            r.fit.slope,
            r.fit.intercept
        );
    }
    if !notes.is_empty() {
        let _ = writeln!(s, "\nnotes");
        for n in notes {
            let _ = writeln!(s, "  {n}");
        }
    }
    s
}
