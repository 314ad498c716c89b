//! Power traces, meter descriptions and trace validation.
//!
//! All quantities are SI: seconds (epoch-based wall clock), watts, joules.
//! Microjoule counters are converted where they are read.

use std::fmt;
use std::io::{Read, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Gaps longer than this many nominal intervals are reported by [`PowerTrace::validate`].
pub const GAP_TOLERANCE: f64 = 3.0;

/// Header of the trace CSV format.
pub const TRACE_CSV_HEADER: [&str; 2] = ["timestamp", "power_w"];

/// One power reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    /// Epoch seconds.
    pub timestamp: f64,
    /// Watts.
    pub power: f64,
}

impl PowerSample {
    pub fn new(timestamp: f64, power: f64) -> Self {
        Self { timestamp, power }
    }
}

/// Timestamped power samples from a single meter.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerTrace {
    pub meter_id: String,
    pub samples: Vec<PowerSample>,
    /// Expected spacing between samples, in seconds.
    pub nominal_interval: f64,
}

/// A broken [`PowerTrace`] invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonFiniteTimestamp { index: usize },
    InvalidPower { index: usize, power: f64 },
    NonIncreasing { index: usize },
    Gap { index: usize, gap: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFiniteTimestamp { index } => {
                write!(f, "non-finite timestamp at index {index}")
            }
            Violation::InvalidPower { index, power } => {
                write!(f, "invalid power {power} W at index {index}")
            }
            Violation::NonIncreasing { index } => {
                write!(f, "non-increasing timestamp at index {index}")
            }
            Violation::Gap { index, gap } => {
                write!(f, "gap of {gap} s before index {index}")
            }
        }
    }
}

impl PowerTrace {
    pub fn new(meter_id: impl Into<String>, nominal_interval: f64) -> Self {
        Self {
            meter_id: meter_id.into(),
            samples: Vec::new(),
            nominal_interval,
        }
    }

    pub fn with_samples(
        meter_id: impl Into<String>,
        nominal_interval: f64,
        samples: Vec<PowerSample>,
    ) -> Self {
        Self {
            meter_id: meter_id.into(),
            samples,
            nominal_interval,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn first_timestamp(&self) -> Option<f64> {
        self.samples.first().map(|s| s.timestamp)
    }

    pub fn last_timestamp(&self) -> Option<f64> {
        self.samples.last().map(|s| s.timestamp)
    }

    pub fn powers(&self) -> impl Iterator<Item = f64> + Clone + '_ {
        self.samples.iter().map(|s| s.power)
    }

    /// Checks every trace invariant and lists the violations; an empty list
    /// means the trace is well formed.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let max_gap = GAP_TOLERANCE * self.nominal_interval;
        for (index, s) in self.samples.iter().enumerate() {
            if !s.timestamp.is_finite() {
                out.push(Violation::NonFiniteTimestamp { index });
            }
            if !(s.power >= 0.0) || !s.power.is_finite() {
                out.push(Violation::InvalidPower { index, power: s.power });
            }
            if index == 0 {
                continue;
            }
            let prev = self.samples[index - 1].timestamp;
            if !(s.timestamp > prev) {
                out.push(Violation::NonIncreasing { index });
            } else if s.timestamp - prev > max_gap {
                out.push(Violation::Gap {
                    index,
                    gap: s.timestamp - prev,
                });
            }
        }
        out
    }

    /// Writes the trace as `timestamp,power_w` CSV with epoch timestamps.
    ///
    /// Values use the shortest representation that parses back to the same
    /// `f64`, so a write/read cycle is lossless.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), TraceCsvError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(TRACE_CSV_HEADER)?;
        for s in &self.samples {
            w.write_record([s.timestamp.to_string(), s.power.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a trace CSV. The header row is optional; timestamps may be epoch
    /// seconds or ISO-8601 / RFC 3339 instants. Line numbers in errors refer
    /// to physical lines of the input.
    pub fn read_csv<R: Read>(
        reader: R,
        meter_id: impl Into<String>,
        nominal_interval: f64,
    ) -> Result<Self, TraceCsvError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(reader);
        let mut samples: Vec<PowerSample> = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(row as u64 + 1);
            if row == 0 && record.get(0) == Some(TRACE_CSV_HEADER[0]) {
                if record.get(1) != Some(TRACE_CSV_HEADER[1]) || record.len() != 2 {
                    return Err(TraceCsvError::Malformed {
                        line,
                        reason: "expected header `timestamp,power_w`".into(),
                    });
                }
                continue;
            }
            if record.len() == 1 && record.get(0) == Some("") {
                continue;
            }
            if record.len() != 2 {
                return Err(TraceCsvError::Malformed {
                    line,
                    reason: format!("expected 2 fields, found {}", record.len()),
                });
            }
            let timestamp = parse_timestamp(&record[0]).ok_or_else(|| TraceCsvError::Malformed {
                line,
                reason: format!("unparseable timestamp {:?}", &record[0]),
            })?;
            let power: f64 = record[1].parse().map_err(|_| TraceCsvError::Malformed {
                line,
                reason: format!("unparseable power {:?}", &record[1]),
            })?;
            if !(power >= 0.0) || !power.is_finite() {
                return Err(TraceCsvError::NegativePower { line, power });
            }
            if let Some(prev) = samples.last() {
                if !(timestamp > prev.timestamp) {
                    return Err(TraceCsvError::NonIncreasing { line });
                }
            }
            samples.push(PowerSample { timestamp, power });
        }
        if samples.is_empty() {
            return Err(TraceCsvError::Empty);
        }
        Ok(Self::with_samples(meter_id, nominal_interval, samples))
    }
}

/// Parses epoch seconds or an RFC 3339 timestamp into epoch seconds.
pub fn parse_timestamp(field: &str) -> Option<f64> {
    if let Ok(secs) = field.parse::<f64>() {
        return secs.is_finite().then_some(secs);
    }
    let dt = chrono::DateTime::parse_from_rfc3339(field).ok()?;
    Some(dt.timestamp() as f64 + f64::from(dt.timestamp_subsec_nanos()) * 1e-9)
}

#[derive(Debug, Error)]
pub enum TraceCsvError {
    #[error("line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error("line {line}: non-increasing timestamp")]
    NonIncreasing { line: u64 },
    #[error("line {line}: negative or non-finite power {power}")]
    NegativePower { line: u64, power: f64 },
    #[error("trace file contains no samples")]
    Empty,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Energy-counter power domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Domain {
    /// Whole socket.
    #[serde(rename = "PKG")]
    Pkg,
    /// All cores.
    #[serde(rename = "PP0")]
    Pp0,
    /// Integrated graphics.
    #[serde(rename = "PP1")]
    Pp1,
    #[serde(rename = "DRAM")]
    Dram,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Pkg => "PKG",
            Domain::Pp0 => "PP0",
            Domain::Pp1 => "PP1",
            Domain::Dram => "DRAM",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeterKind {
    CounterSoftware,
    ExternalHardware,
    Synthetic,
}

/// What a meter sees: the processor package or the whole workstation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Chip,
    Wall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeterSpec {
    pub meter_id: String,
    pub kind: MeterKind,
    pub scope: Scope,
    pub nominal_interval: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub domains: Vec<Domain>,
    /// Root of the power-capping sysfs tree; counter meters only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub powercap_root: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeterSpecError {
    #[error("meter {0}: nominal_interval must be > 0")]
    Interval(String),
    #[error("meter {0}: counter meters need at least one domain")]
    MissingDomains(String),
    #[error("meter {0}: only counter meters take domains")]
    UnexpectedDomains(String),
}

impl MeterSpec {
    pub fn validate(&self) -> Result<(), MeterSpecError> {
        if !(self.nominal_interval > 0.0) || !self.nominal_interval.is_finite() {
            return Err(MeterSpecError::Interval(self.meter_id.clone()));
        }
        match (self.kind, self.domains.is_empty()) {
            (MeterKind::CounterSoftware, true) => {
                Err(MeterSpecError::MissingDomains(self.meter_id.clone()))
            }
            (MeterKind::ExternalHardware | MeterKind::Synthetic, false) => {
                Err(MeterSpecError::UnexpectedDomains(self.meter_id.clone()))
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(ts: &[f64], interval: f64) -> PowerTrace {
        PowerTrace::with_samples(
            "m",
            interval,
            ts.iter().map(|&t| PowerSample::new(t, 10.0)).collect(),
        )
    }

    #[test]
    fn well_formed_trace_has_no_violations() {
        assert!(trace(&[0.0, 0.5, 1.0], 0.5).validate().is_empty());
        assert!(trace(&[], 0.5).validate().is_empty());
    }

    #[test]
    fn ordering_violation_reported_at_index() {
        let report = trace(&[0.0, 0.5, 0.4], 0.5).validate();
        assert_eq!(report, vec![Violation::NonIncreasing { index: 2 }]);
        assert_eq!(report[0].to_string(), "non-increasing timestamp at index 2");
    }

    #[test]
    fn gap_rule() {
        // 2.0 > 3 * 0.5
        let report = trace(&[0.0, 2.0], 0.5).validate();
        assert_eq!(report, vec![Violation::Gap { index: 1, gap: 2.0 }]);
        // exactly three intervals is tolerated
        assert!(trace(&[0.0, 1.5], 0.5).validate().is_empty());
    }

    #[test]
    fn negative_power_flagged() {
        let t = PowerTrace::with_samples("m", 1.0, vec![PowerSample::new(0.0, -1.0)]);
        assert!(matches!(t.validate()[0], Violation::InvalidPower { index: 0, .. }));
    }

    #[test]
    fn csv_iso_timestamp() {
        let src = "timestamp,power_w\n2023-09-01T12:00:00.500Z,53.2\n";
        let t = PowerTrace::read_csv(src.as_bytes(), "hw", 0.5).unwrap();
        assert_eq!(t.samples, vec![PowerSample::new(1_693_569_600.5, 53.2)]);
        assert_eq!(t.meter_id, "hw");
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let err = PowerTrace::read_csv("10.0,1\n9.5,1\n".as_bytes(), "m", 1.0).unwrap_err();
        assert!(matches!(err, TraceCsvError::NonIncreasing { line: 2 }), "{err}");
        let err =
            PowerTrace::read_csv("timestamp,power_w\n10.0,1\n9.5,1\n".as_bytes(), "m", 1.0)
                .unwrap_err();
        assert!(matches!(err, TraceCsvError::NonIncreasing { line: 3 }), "{err}");
        let err = PowerTrace::read_csv("10.0,-3.0\n".as_bytes(), "m", 1.0).unwrap_err();
        assert!(matches!(err, TraceCsvError::NegativePower { line: 1, .. }));
        let err = PowerTrace::read_csv("10.0,abc\n".as_bytes(), "m", 1.0).unwrap_err();
        assert!(matches!(err, TraceCsvError::Malformed { line: 1, .. }));
        let err = PowerTrace::read_csv("timestamp,power_w\n".as_bytes(), "m", 1.0).unwrap_err();
        assert!(matches!(err, TraceCsvError::Empty));
    }

    #[test]
    fn meter_spec_domain_rule() {
        let mut spec = MeterSpec {
            meter_id: "rapl".into(),
            kind: MeterKind::CounterSoftware,
            scope: Scope::Chip,
            nominal_interval: 0.1,
            domains: vec![],
            powercap_root: None,
        };
        assert!(matches!(spec.validate(), Err(MeterSpecError::MissingDomains(_))));
        spec.domains.push(Domain::Pkg);
        assert!(spec.validate().is_ok());
        spec.kind = MeterKind::ExternalHardware;
        assert!(matches!(spec.validate(), Err(MeterSpecError::UnexpectedDomains(_))));
        spec.domains.clear();
        spec.nominal_interval = 0.0;
        assert!(matches!(spec.validate(), Err(MeterSpecError::Interval(_))));
    }
}
