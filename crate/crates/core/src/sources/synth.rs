//! Seeded synthetic power traces: piecewise-linear base power plus Gaussian noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::trace::{PowerSample, PowerTrace};

use super::SourceError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub duration: f64,
    pub start_power: f64,
    pub end_power: f64,
}

impl Segment {
    pub fn new(duration: f64, start_power: f64, end_power: f64) -> Self {
        Self {
            duration,
            start_power,
            end_power,
        }
    }

    pub fn constant(duration: f64, power: f64) -> Self {
        Self::new(duration, power, power)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticProfile {
    pub segments: Vec<Segment>,
    pub noise_std: f64,
    pub seed: u64,
}

impl SyntheticProfile {
    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    /// Noise-free power `t` seconds after the profile starts. A time on a
    /// segment boundary takes the later segment's start value.
    pub fn base_power(&self, t: f64) -> f64 {
        let mut seg_start = 0.0;
        for seg in &self.segments {
            let seg_end = seg_start + seg.duration;
            if t < seg_end {
                let frac = (t - seg_start) / seg.duration;
                return seg.start_power + (seg.end_power - seg.start_power) * frac;
            }
            seg_start = seg_end;
        }
        self.segments.last().map_or(0.0, |s| s.end_power)
    }

    fn validate(&self) -> Result<(), SourceError> {
        let ok = !self.segments.is_empty()
            && self.noise_std >= 0.0
            && self.segments.iter().all(|s| {
                s.duration > 0.0
                    && s.start_power >= 0.0
                    && s.end_power >= 0.0
                    && s.duration.is_finite()
            });
        if ok {
            Ok(())
        } else {
            Err(SourceError::InvalidProfile)
        }
    }
}

/// Samples the profile every `interval` seconds starting at time 0, including
/// the end point when it lands on the grid.
pub fn synth_trace(
    profile: &SyntheticProfile,
    interval: f64,
    meter_id: &str,
) -> Result<PowerTrace, SourceError> {
    synth_trace_from(profile, interval, meter_id, 0.0)
}

/// As [`synth_trace`], with timestamps offset by `t0`.
pub fn synth_trace_from(
    profile: &SyntheticProfile,
    interval: f64,
    meter_id: &str,
    t0: f64,
) -> Result<PowerTrace, SourceError> {
    if !(interval > 0.0) || !interval.is_finite() {
        return Err(SourceError::Interval(interval));
    }
    profile.validate()?;
    let total = profile.total_duration();
    // small slack so an end point that is a float hair past the grid still counts
    let n = (total / interval + 1e-9).floor() as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let noise = (profile.noise_std > 0.0)
        .then(|| Normal::new(0.0, profile.noise_std).expect("noise_std validated"));
    let samples = (0..=n)
        .map(|k| {
            let t = k as f64 * interval;
            let mut p = profile.base_power(t.min(total));
            if let Some(dist) = &noise {
                p = (p + dist.sample(&mut rng)).max(0.0);
            }
            PowerSample::new(t0 + t, p)
        })
        .collect();
    Ok(PowerTrace::with_samples(meter_id, interval, samples))
}
