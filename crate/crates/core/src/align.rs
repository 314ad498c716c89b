//! Job-window alignment against power traces, energy integration, idle
//! baselines and the processor/storage/background energy split.

use thiserror::Error;

use crate::job::{EnergyDecomposition, Process};
use crate::trace::{PowerSample, PowerTrace};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlignError {
    #[error("trace is empty")]
    EmptyTrace,
    #[error("max_gap must be > 0")]
    MaxGap,
    #[error("nearest sample to t={t} is {distance} s away (limit {max_gap} s)")]
    TooFar { t: f64, distance: f64, max_gap: f64 },
    #[error("window [{start}, {end}] is empty or reversed")]
    EmptyWindow { start: f64, end: f64 },
    #[error("window [{start}, {end}] is not covered by trace [{first}, {last}]")]
    Coverage {
        start: f64,
        end: f64,
        first: f64,
        last: f64,
    },
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("invalid decomposition input: {0}")]
    Decomposition(&'static str),
}

/// Index of the sample closest to `t`; ties go to the earlier sample.
pub fn nearest_timestamp(trace: &PowerTrace, t: f64, max_gap: f64) -> Result<usize, AlignError> {
    if trace.is_empty() {
        return Err(AlignError::EmptyTrace);
    }
    if !(max_gap > 0.0) {
        return Err(AlignError::MaxGap);
    }
    let s = &trace.samples;
    let after = s.partition_point(|x| x.timestamp < t);
    let idx = match (after.checked_sub(1), (after < s.len()).then_some(after)) {
        (Some(i), Some(j)) => {
            if t - s[i].timestamp <= s[j].timestamp - t {
                i
            } else {
                j
            }
        }
        (Some(i), None) => i,
        (None, Some(j)) => j,
        (None, None) => unreachable!("trace is non-empty"),
    };
    let distance = (s[idx].timestamp - t).abs();
    if distance > max_gap {
        return Err(AlignError::TooFar { t, distance, max_gap });
    }
    Ok(idx)
}

/// Power at `t`: linear interpolation between bracketing samples, or the
/// first/last sample when `t` lies outside the trace by at most `max_gap`.
fn power_at(samples: &[PowerSample], t: f64, max_gap: f64) -> Option<f64> {
    let first = samples.first()?;
    let last = samples.last()?;
    if t < first.timestamp {
        return (first.timestamp - t <= max_gap).then_some(first.power);
    }
    if t >= last.timestamp {
        return (t - last.timestamp <= max_gap).then_some(last.power);
    }
    let k = samples.partition_point(|s| s.timestamp <= t);
    let (a, b) = (samples[k - 1], samples[k]);
    if t == a.timestamp {
        return Some(a.power);
    }
    let frac = (t - a.timestamp) / (b.timestamp - a.timestamp);
    Some(a.power + (b.power - a.power) * frac)
}

/// Cuts `[start, end]` out of a trace, adding interpolated boundary samples
/// at exactly `start` and `end`.
pub fn extract_window(
    trace: &PowerTrace,
    start: f64,
    end: f64,
    max_gap: f64,
) -> Result<PowerTrace, AlignError> {
    if !(start < end) {
        return Err(AlignError::EmptyWindow { start, end });
    }
    let (Some(first), Some(last)) = (trace.first_timestamp(), trace.last_timestamp()) else {
        return Err(AlignError::EmptyTrace);
    };
    let coverage = || AlignError::Coverage {
        start,
        end,
        first,
        last,
    };
    let p_start = power_at(&trace.samples, start, max_gap).ok_or_else(coverage)?;
    let p_end = power_at(&trace.samples, end, max_gap).ok_or_else(coverage)?;

    let mut samples = Vec::with_capacity(trace.len() + 2);
    samples.push(PowerSample::new(start, p_start));
    samples.extend(
        trace
            .samples
            .iter()
            .filter(|s| s.timestamp > start && s.timestamp < end)
            .copied(),
    );
    samples.push(PowerSample::new(end, p_end));
    Ok(PowerTrace::with_samples(
        trace.meter_id.clone(),
        trace.nominal_interval,
        samples,
    ))
}

/// Energy and sample statistics of a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowEnergy {
    /// Joules.
    pub energy: f64,
    pub n_samples: usize,
    pub mean_power: f64,
    /// Sample standard deviation (divisor n - 1).
    pub std_power: f64,
}

/// Trapezoidal integral of power over the window.
pub fn integrate_energy(window: &PowerTrace) -> Result<WindowEnergy, AlignError> {
    let s = &window.samples;
    if s.len() < 2 {
        return Err(AlignError::TooFewSamples(s.len()));
    }
    let energy = s
        .windows(2)
        .map(|w| 0.5 * (w[0].power + w[1].power) * (w[1].timestamp - w[0].timestamp))
        .sum();
    let (mean_power, std_power) = mean_std(window.powers());
    Ok(WindowEnergy {
        energy,
        n_samples: s.len(),
        mean_power,
        std_power,
    })
}

/// Arithmetic mean and sample standard deviation (n - 1); std is 0 for n < 2.
pub fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Mean power of a trace recorded with no benchmark job running.
pub fn measure_idle_baseline(trace: &PowerTrace) -> Result<f64, AlignError> {
    if trace.len() < 2 {
        return Err(AlignError::TooFewSamples(trace.len()));
    }
    Ok(mean_std(trace.powers()).0)
}

/// Splits a wall-scope energy into processor, storage and background parts.
///
/// Encode: `e_x = idle_power * duration` and storage takes the remainder.
/// Decode writes nothing, so storage is zero and background takes the
/// remainder. Negative remainders are kept and flagged.
pub fn decompose_energy(
    e_total: f64,
    e_proc: f64,
    idle_power: f64,
    duration: f64,
    process: Process,
) -> Result<EnergyDecomposition, AlignError> {
    if !(e_total >= 0.0) || !(e_proc >= 0.0) {
        return Err(AlignError::Decomposition("energies must be >= 0"));
    }
    if !(duration > 0.0) {
        return Err(AlignError::Decomposition("duration must be > 0"));
    }
    let (e_strg, e_x) = match process {
        Process::Encode => {
            if !(idle_power >= 0.0) {
                return Err(AlignError::Decomposition("idle power must be >= 0"));
            }
            let e_x = idle_power * duration;
            (e_total - e_proc - e_x, e_x)
        }
        Process::Decode => (0.0, e_total - e_proc),
        Process::Idle => return Err(AlignError::Decomposition("idle jobs are not decomposed")),
    };
    Ok(EnergyDecomposition {
        e_total,
        e_proc,
        e_strg,
        e_x,
        residual_negative: e_strg < 0.0 || e_x < 0.0,
    })
}
