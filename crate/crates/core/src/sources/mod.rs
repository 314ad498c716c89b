//! Power sources: on-chip energy counters, external meter logs, and a seeded
//! synthetic generator.

use std::io::Read;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;

use crate::trace::{Domain, MeterKind, MeterSpec, MeterSpecError, PowerTrace, TraceCsvError};

pub mod counter;
pub mod sampler;
pub mod synth;

pub use counter::{counters_to_power, CounterFiles, CounterReading, PowercapReader};
pub use sampler::{sample_power, CounterSource, Reading, SampleSource, SampledTrace, StopSignal, ThreadedMeter};
pub use synth::{synth_trace, synth_trace_from, Segment, SyntheticProfile};

/// Epoch seconds from the system clock; shared by samplers and the job executor.
pub fn wall_clock_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// A meter that records a trace between `start` and `stop`.
///
/// Exactly one sampler runs per meter; the trace is only handed out once
/// `stop` returns.
pub trait Meter: Send {
    fn spec(&self) -> &MeterSpec;
    fn start(&mut self) -> Result<(), SourceError>;
    fn stop(&mut self) -> Result<PowerTrace, SourceError>;
}

impl<M: Meter + ?Sized> Meter for Box<M> {
    fn spec(&self) -> &MeterSpec {
        (**self).spec()
    }

    fn start(&mut self) -> Result<(), SourceError> {
        (**self).start()
    }

    fn stop(&mut self) -> Result<PowerTrace, SourceError> {
        (**self).stop()
    }
}

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("power domain {0} is not available on this platform")]
    DomainUnavailable(Domain),
    #[error("permission denied reading {}", .0.display())]
    PermissionDenied(PathBuf),
    #[error("reading {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: not a counter value: {text:?}", path.display())]
    Parse { path: PathBuf, text: String },
    #[error("counter {counter} outside [0, {wrap_limit})")]
    CounterRange { counter: u64, wrap_limit: u64 },
    #[error("counter readings disagree on wrap limit at index {index}")]
    WrapLimitMismatch { index: usize },
    #[error("need at least 2 counter readings, got {0}")]
    InsufficientReadings(usize),
    #[error("non-increasing timestamp at reading {index}")]
    NonIncreasing { index: usize },
    #[error("sampling interval must be > 0, got {0}")]
    Interval(f64),
    #[error("synthetic profile needs positive durations and non-negative powers")]
    InvalidProfile,
    #[error("source mixed counter and power readings")]
    MixedReadings,
    #[error("meter is already sampling")]
    AlreadyRunning,
    #[error("meter is not sampling")]
    NotRunning,
    #[error("sampler: {0}")]
    Spawn(String),
    #[error("sampler failed after {partial_samples} samples: {source}")]
    SamplerFailed {
        partial_samples: usize,
        source: Box<SourceError>,
    },
    #[error("meter {0} cannot be sampled live")]
    NotLive(String),
    #[error(transparent)]
    Spec(#[from] MeterSpecError),
    #[error(transparent)]
    Csv(#[from] TraceCsvError),
}

/// Reads an external meter log in the trace CSV format.
pub fn ingest_meter_csv<R: Read>(stream: R, spec: &MeterSpec) -> Result<PowerTrace, SourceError> {
    spec.validate()?;
    Ok(PowerTrace::read_csv(stream, spec.meter_id.clone(), spec.nominal_interval)?)
}

/// Opens a live meter for a spec. External hardware meters are logged
/// elsewhere and ingested afterwards, so they yield `Ok(None)`.
pub fn open_live_meter(spec: &MeterSpec) -> Result<Option<Box<dyn Meter>>, SourceError> {
    spec.validate()?;
    match spec.kind {
        MeterKind::CounterSoftware => {
            let reader = spec
                .powercap_root
                .as_ref()
                .map(PowercapReader::new)
                .unwrap_or_default();
            let source = CounterSource::for_domains(&reader, &spec.domains)?;
            Ok(Some(Box::new(ThreadedMeter::new(spec.clone(), source))))
        }
        MeterKind::ExternalHardware => Ok(None),
        MeterKind::Synthetic => Err(SourceError::NotLive(spec.meter_id.clone())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::Scope;

    fn hw_spec() -> MeterSpec {
        MeterSpec {
            meter_id: "pa1000".into(),
            kind: MeterKind::ExternalHardware,
            scope: Scope::Wall,
            nominal_interval: 0.5,
            domains: vec![],
            powercap_root: None,
        }
    }

    #[test]
    fn ingest_tags_meter() {
        let t = ingest_meter_csv("timestamp,power_w\n1.0,50\n1.5,51\n".as_bytes(), &hw_spec())
            .unwrap();
        assert_eq!(t.meter_id, "pa1000");
        assert_eq!(t.nominal_interval, 0.5);
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn ingest_reports_ordering_line() {
        let err = ingest_meter_csv("10.0,1\n9.5,1\n".as_bytes(), &hw_spec()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn external_meters_are_offline() {
        assert!(open_live_meter(&hw_spec()).unwrap().is_none());
    }

    #[test]
    fn counter_meter_without_platform_support() {
        let dir = tempfile::tempdir().unwrap();
        let spec = MeterSpec {
            meter_id: "rapl".into(),
            kind: MeterKind::CounterSoftware,
            scope: Scope::Chip,
            nominal_interval: 0.1,
            domains: vec![Domain::Pkg],
            powercap_root: Some(dir.path().to_path_buf()),
        };
        assert!(matches!(
            open_live_meter(&spec),
            Err(SourceError::DomainUnavailable(Domain::Pkg))
        ));
    }
}
