//! Statistical reliability of power measurements: the relative-dispersion
//! criterion on pooled power samples, Student-t critical values, duplication
//! planning and the repeat-until-reliable measurement loop.
//!
//! The criterion accepts a sample of `N` powers with mean `P̄` and standard
//! deviation `σ` when
//!
//! ```text
//! t(α/2, N-1) · σ / (2 α P̄)  <  N · √(2N)
//! ```
//!
//! It is applied exactly in this form.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

use crate::align::{extract_window, integrate_energy, mean_std, AlignError};
use crate::job::{EnergyMeasurement, JobRecord};
use crate::orchestrator::exec::{run_job, Executor, JobSpec, RunJobError};
use crate::sources::{Meter, SourceError};
use crate::trace::PowerTrace;

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_N_MIN: usize = 30;
pub const DEFAULT_MAX_REPETITIONS: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReliabilityParams {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_n_min")]
    pub n_min: usize,
    #[serde(default = "default_max_repetitions")]
    pub max_repetitions: u32,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_n_min() -> usize {
    DEFAULT_N_MIN
}

fn default_max_repetitions() -> u32 {
    DEFAULT_MAX_REPETITIONS
}

impl Default for ReliabilityParams {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            n_min: DEFAULT_N_MIN,
            max_repetitions: DEFAULT_MAX_REPETITIONS,
        }
    }
}

impl ReliabilityParams {
    pub fn validate(&self) -> Result<(), ReliabilityError> {
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(ReliabilityError::Alpha(self.alpha));
        }
        if self.n_min < 2 {
            return Err(ReliabilityError::NMin(self.n_min));
        }
        if self.max_repetitions < 1 {
            return Err(ReliabilityError::MaxRepetitions);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReliabilityError {
    #[error("alpha must lie in (0, 0.5), got {0}")]
    Alpha(f64),
    #[error("upper-tail probability must lie in (0, 0.5), got {0}")]
    TailProbability(f64),
    #[error("degrees of freedom must be >= 1 or infinite, got {0}")]
    DegreesOfFreedom(f64),
    #[error("n_min must be >= 2, got {0}")]
    NMin(usize),
    #[error("max_repetitions must be >= 1")]
    MaxRepetitions,
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("mean power must be > 0, got {0}")]
    MeanNotPositive(f64),
    #[error("standard deviation must be >= 0, got {0}")]
    NegativeStd(f64),
    #[error("estimated duration and interval must be > 0")]
    Duration,
}

/// Upper-tail critical value of Student's t: the `q` with
/// `P(T > q) = alpha_half` for `df` degrees of freedom. `f64::INFINITY`
/// selects the normal limit.
pub fn t_critical(alpha_half: f64, df: f64) -> Result<f64, ReliabilityError> {
    if !(alpha_half > 0.0 && alpha_half < 0.5) {
        return Err(ReliabilityError::TailProbability(alpha_half));
    }
    if df.is_nan() || df < 1.0 {
        return Err(ReliabilityError::DegreesOfFreedom(df));
    }
    let p = 1.0 - alpha_half;
    let q = if df.is_infinite() {
        Normal::standard().inverse_cdf(p)
    } else {
        StudentsT::new(0.0, 1.0, df)
            .map_err(|_| ReliabilityError::DegreesOfFreedom(df))?
            .inverse_cdf(p)
    };
    Ok(q)
}

/// Outcome of one evaluation of the criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityCheck {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub t_crit: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

/// Evaluates the criterion with `df = n - 1`.
pub fn check_reliability(
    n: usize,
    mean: f64,
    std: f64,
    params: &ReliabilityParams,
) -> Result<ReliabilityCheck, ReliabilityError> {
    params.validate()?;
    if n < 2 {
        return Err(ReliabilityError::TooFewSamples(n));
    }
    if !(mean > 0.0) {
        return Err(ReliabilityError::MeanNotPositive(mean));
    }
    if !(std >= 0.0) {
        return Err(ReliabilityError::NegativeStd(std));
    }
    let alpha = params.alpha;
    let t_crit = t_critical(alpha / 2.0, (n - 1) as f64)?;
    let lhs = t_crit * std / (2.0 * alpha * mean);
    let nf = n as f64;
    let rhs = nf * (2.0 * nf).sqrt();
    Ok(ReliabilityCheck {
        n,
        mean,
        std,
        t_crit,
        lhs,
        rhs,
        satisfied: lhs < rhs,
    })
}

/// Number of back-to-back copies of a sequence needed for a job of
/// `est_duration` seconds to yield about `n_min` samples at `interval`.
pub fn plan_duplication(
    est_duration: f64,
    interval: f64,
    n_min: usize,
) -> Result<u32, ReliabilityError> {
    if !(est_duration > 0.0) || !(interval > 0.0) {
        return Err(ReliabilityError::Duration);
    }
    if n_min < 2 {
        return Err(ReliabilityError::NMin(n_min));
    }
    let ratio = n_min as f64 * interval / est_duration;
    // absorb representation error so exact ratios such as 25.000000000000004 stay 25
    let k = (ratio * (1.0 - 1e-12)).ceil();
    Ok(k.clamp(1.0, f64::from(u32::MAX)) as u32)
}

/// Result of [`run_until_reliable`], one entry per meter where applicable.
#[derive(Debug, Clone)]
pub struct ReliableRun {
    pub records: Vec<JobRecord>,
    pub measurements: Vec<EnergyMeasurement>,
    /// Final check per meter; `None` when the pooled samples were unusable.
    pub checks: Vec<Option<ReliabilityCheck>>,
    /// Each meter's traces across all repetitions, concatenated.
    pub traces: Vec<PowerTrace>,
    pub repetitions: u32,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Params(#[from] ReliabilityError),
    #[error("repetition {repetition}: {source}")]
    Job {
        repetition: u32,
        source: RunJobError,
    },
    #[error("repetition {repetition}, meter {meter}: {source}")]
    Sampler {
        repetition: u32,
        meter: String,
        source: SourceError,
    },
    #[error("repetition {repetition}, meter {meter}: {source}")]
    Window {
        repetition: u32,
        meter: String,
        source: AlignError,
    },
}

/// Runs `job` repeatedly while every meter samples it, until each meter's
/// pooled window samples number at least `n_min` and pass the criterion, or
/// `max_repetitions` is reached. Reported energy is the mean over repetitions.
///
/// `lead` seconds of settle time are inserted after the samplers start and
/// before they stop, so each trace brackets the job window.
pub fn run_until_reliable(
    job: &JobSpec,
    executor: &mut dyn Executor,
    meters: &mut [Box<dyn Meter>],
    params: &ReliabilityParams,
    lead: f64,
) -> Result<ReliableRun, RunError> {
    params.validate()?;
    let m = meters.len();
    let mut records = Vec::new();
    let mut pooled: Vec<Vec<f64>> = vec![Vec::new(); m];
    let mut energies: Vec<Vec<f64>> = vec![Vec::new(); m];
    let mut traces: Vec<PowerTrace> = meters
        .iter()
        .map(|mt| PowerTrace::new(mt.spec().meter_id.clone(), mt.spec().nominal_interval))
        .collect();
    let mut checks: Vec<Option<ReliabilityCheck>> = vec![None; m];
    let mut repetitions = 0;

    for repetition in 0..params.max_repetitions {
        repetitions = repetition + 1;
        for i in 0..m {
            if let Err(source) = meters[i].start() {
                stop_all(&mut meters[..i]);
                return Err(RunError::Sampler {
                    repetition,
                    meter: meters[i].spec().meter_id.clone(),
                    source,
                });
            }
        }
        executor.settle(lead);
        let record = match run_job(job, repetition, executor) {
            Ok(r) => r,
            Err(source) => {
                stop_all(meters);
                return Err(RunError::Job { repetition, source });
            }
        };
        executor.settle(lead);

        let mut rep_traces = Vec::with_capacity(m);
        let mut first_err = None;
        for meter in meters.iter_mut() {
            match meter.stop() {
                Ok(t) => rep_traces.push(t),
                Err(source) if first_err.is_none() => {
                    first_err = Some(RunError::Sampler {
                        repetition,
                        meter: meter.spec().meter_id.clone(),
                        source,
                    })
                }
                Err(_) => {}
            }
        }
        if let Some(e) = first_err {
            return Err(e);
        }

        for (i, trace) in rep_traces.into_iter().enumerate() {
            let max_gap = trace.nominal_interval;
            let window = extract_window(&trace, record.start, record.end, max_gap)
                .and_then(|w| integrate_energy(&w).map(|e| (w, e)))
                .map_err(|source| RunError::Window {
                    repetition,
                    meter: trace.meter_id.clone(),
                    source,
                })?;
            let (w, e) = window;
            energies[i].push(e.energy);
            pooled[i].extend(w.powers());
            // back-to-back repetitions can share a boundary timestamp; keep it once
            let last = traces[i].last_timestamp().unwrap_or(f64::NEG_INFINITY);
            traces[i]
                .samples
                .extend(trace.samples.into_iter().filter(|s| s.timestamp > last));
        }
        records.push(record);

        let mut all_reliable = true;
        for i in 0..m {
            let (mean, std) = mean_std(pooled[i].iter().copied());
            checks[i] = check_reliability(pooled[i].len(), mean, std, params).ok();
            let ok = pooled[i].len() >= params.n_min && checks[i].is_some_and(|c| c.satisfied);
            all_reliable &= ok;
        }
        if all_reliable {
            break;
        }
    }

    let measurements = (0..m)
        .map(|i| {
            let (mean, std) = mean_std(pooled[i].iter().copied());
            let reliable =
                pooled[i].len() >= params.n_min && checks[i].is_some_and(|c| c.satisfied);
            EnergyMeasurement {
                job_id: job.job_id.clone(),
                meter_id: meters[i].spec().meter_id.clone(),
                energy: energies[i].iter().sum::<f64>() / energies[i].len() as f64,
                n_samples: pooled[i].len(),
                mean_power: mean,
                std_power: std,
                reliable,
                alpha: params.alpha,
            }
        })
        .collect();
    Ok(ReliableRun {
        records,
        measurements,
        checks,
        traces,
        repetitions,
    })
}

fn stop_all(meters: &mut [Box<dyn Meter>]) {
    for m in meters {
        if let Err(e) = m.stop() {
            log::warn!("stopping meter {}: {e}", m.spec().meter_id);
        }
    }
}
