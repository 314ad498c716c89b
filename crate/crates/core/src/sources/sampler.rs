//! Periodic sampling of a live source on a background thread.

use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::trace::{Domain, MeterSpec, PowerSample, PowerTrace};

use super::counter::{counters_to_power, CounterFiles, CounterReading, PowercapReader};
use super::{wall_clock_now, Meter, SourceError};

/// What a source returns on each tick.
#[derive(Debug, Clone, PartialEq)]
pub enum Reading {
    /// One counter value per domain, all stamped with the same time.
    Counters(Vec<CounterReading>),
    /// An instantaneous power value.
    Power(PowerSample),
}

pub trait SampleSource: Send + 'static {
    fn read(&mut self) -> Result<Reading, SourceError>;
}

/// Reads one or more counter domains per tick; their powers are summed.
#[derive(Debug, Clone)]
pub struct CounterSource {
    files: Vec<CounterFiles>,
}

impl CounterSource {
    pub fn new(files: Vec<CounterFiles>) -> Self {
        Self { files }
    }

    pub fn for_domains(reader: &PowercapReader, domains: &[Domain]) -> Result<Self, SourceError> {
        let files = domains
            .iter()
            .map(|&d| reader.files(d))
            .collect::<Result<Vec<_>, _>>()?;
        // surface permission problems before sampling starts
        for f in &files {
            f.read()?;
        }
        Ok(Self { files })
    }
}

impl SampleSource for CounterSource {
    fn read(&mut self) -> Result<Reading, SourceError> {
        let before = wall_clock_now();
        let mut readings = self
            .files
            .iter()
            .map(CounterFiles::read)
            .collect::<Result<Vec<_>, _>>()?;
        let t = 0.5 * (before + wall_clock_now());
        for r in &mut readings {
            r.timestamp = t;
        }
        Ok(Reading::Counters(readings))
    }
}

/// One-shot stop flag shared between a sampler and its controller.
#[derive(Debug, Clone, Default)]
pub struct StopSignal(Arc<(Mutex<bool>, Condvar)>);

impl StopSignal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn raise(&self) {
        let (lock, cv) = &*self.0;
        *lock.lock().unwrap_or_else(|e| e.into_inner()) = true;
        cv.notify_all();
    }

    pub fn is_raised(&self) -> bool {
        *self.0 .0.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Blocks until `deadline` or until raised; returns whether it was raised.
    pub fn wait_until(&self, deadline: Instant) -> bool {
        let (lock, cv) = &*self.0;
        let mut raised = lock.lock().unwrap_or_else(|e| e.into_inner());
        while !*raised {
            let now = Instant::now();
            if now >= deadline {
                return false;
            }
            raised = cv
                .wait_timeout(raised, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
        true
    }
}

/// Output of [`sample_power`]: what was collected and, if the source failed
/// mid-run, why sampling ended early.
#[derive(Debug)]
pub struct SampledTrace {
    pub trace: PowerTrace,
    pub failure: Option<SourceError>,
}

/// Reads `source` every `interval` seconds until `stop` is raised, then takes
/// one closing reading so the trace reaches the stop time.
pub fn sample_power<S: SampleSource + ?Sized>(
    source: &mut S,
    interval: f64,
    stop: &StopSignal,
    meter_id: &str,
) -> Result<SampledTrace, SourceError> {
    if !(interval > 0.0) || !interval.is_finite() {
        return Err(SourceError::Interval(interval));
    }
    let period = Duration::from_secs_f64(interval);
    let origin = Instant::now();
    let mut readings = Vec::new();
    let mut failure = None;
    let mut tick: u32 = 0;
    if !stop.is_raised() {
        loop {
            match source.read() {
                Ok(r) => readings.push(r),
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
            tick += 1;
            if stop.wait_until(origin + period * tick) {
                match source.read() {
                    Ok(r) => readings.push(r),
                    Err(e) => failure = Some(e),
                }
                break;
            }
        }
    }
    let trace = readings_to_trace(&readings, meter_id, interval)?;
    Ok(SampledTrace { trace, failure })
}

fn readings_to_trace(
    readings: &[Reading],
    meter_id: &str,
    interval: f64,
) -> Result<PowerTrace, SourceError> {
    let mut powers = Vec::new();
    let mut counters: Vec<&[CounterReading]> = Vec::new();
    for r in readings {
        match r {
            Reading::Power(s) => powers.push(*s),
            Reading::Counters(c) => counters.push(c),
        }
    }
    if !powers.is_empty() && !counters.is_empty() {
        return Err(SourceError::MixedReadings);
    }
    if counters.len() < 2 {
        return Ok(PowerTrace::with_samples(meter_id, interval, powers));
    }
    let domains = counters[0].len();
    if counters.iter().any(|c| c.len() != domains) {
        return Err(SourceError::MixedReadings);
    }
    let mut total: Option<PowerTrace> = None;
    for d in 0..domains {
        let series: Vec<CounterReading> = counters.iter().map(|c| c[d]).collect();
        let trace = counters_to_power(&series, meter_id, interval)?;
        total = Some(match total {
            None => trace,
            Some(mut acc) => {
                for (a, s) in acc.samples.iter_mut().zip(&trace.samples) {
                    a.power += s.power;
                }
                acc
            }
        });
    }
    Ok(total.unwrap_or_else(|| PowerTrace::new(meter_id, interval)))
}

type Worker<S> = JoinHandle<(S, Result<SampledTrace, SourceError>)>;

/// A [`Meter`] that runs [`sample_power`] on its own thread between
/// `start` and `stop`.
pub struct ThreadedMeter<S: SampleSource> {
    spec: MeterSpec,
    source: Option<S>,
    running: Option<(StopSignal, Worker<S>)>,
}

impl<S: SampleSource> ThreadedMeter<S> {
    pub fn new(spec: MeterSpec, source: S) -> Self {
        Self {
            spec,
            source: Some(source),
            running: None,
        }
    }
}

impl<S: SampleSource> Meter for ThreadedMeter<S> {
    fn spec(&self) -> &MeterSpec {
        &self.spec
    }

    fn start(&mut self) -> Result<(), SourceError> {
        let mut source = self.source.take().ok_or(SourceError::AlreadyRunning)?;
        let stop = StopSignal::new();
        let worker_stop = stop.clone();
        let interval = self.spec.nominal_interval;
        let meter_id = self.spec.meter_id.clone();
        let handle = std::thread::Builder::new()
            .name(format!("sampler-{meter_id}"))
            .spawn(move || {
                let out = sample_power(&mut source, interval, &worker_stop, &meter_id);
                (source, out)
            })
            .map_err(|e| SourceError::Spawn(e.to_string()))?;
        self.running = Some((stop, handle));
        Ok(())
    }

    fn stop(&mut self) -> Result<PowerTrace, SourceError> {
        let (stop, handle) = self.running.take().ok_or(SourceError::NotRunning)?;
        stop.raise();
        let (source, out) = handle
            .join()
            .map_err(|_| SourceError::Spawn("sampler thread panicked".into()))?;
        self.source = Some(source);
        let sampled = out?;
        match sampled.failure {
            None => Ok(sampled.trace),
            Some(e) => Err(SourceError::SamplerFailed {
                partial_samples: sampled.trace.len(),
                source: Box::new(e),
            }),
        }
    }
}
