//! A simulated workstation on a virtual clock: an executor that models codec
//! run time, load and output size, and meters that observe the resulting
//! power draw at chip or wall scope. Runs are deterministic for a seed.
//!
//! Every job adds a constant chip load `L` for its duration `T`. The chip
//! meter sees `idle + L`; the wall meter sees `slope · chip` plus
//! `(intercept + δ) / T` while a job runs, where `δ ~ N(0, energy_noise)` is
//! drawn once per execution. Integrated over the job window this gives
//! `E_wall = slope · E_chip + intercept + δ` up to sample noise.
//!
//! Job boundaries and sample instants all lie on a 100 ms grid (job
//! durations on a 500 ms grid), so windows need no boundary interpolation.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::job::{Codec, Crf, Fps, Process, Resolution};
use crate::orchestrator::command::{JobCommand, Workload};
use crate::orchestrator::config::{PipelineConfig, SequenceSpec};
use crate::orchestrator::exec::{ExecError, Execution, Executor};
use crate::orchestrator::pipeline::{run_pipeline, PipelineError};
use crate::reliability::ReliabilityParams;
use crate::sources::{Meter, SourceError};
use crate::trace::{MeterKind, MeterSpec, PowerSample, PowerTrace, Scope};

/// Virtual start time, epoch milliseconds.
pub const SIM_EPOCH_MS: u64 = 1_700_000_000_000;

/// Written next to a simulated dataset.
pub const SIM_PARAMS_FILE: &str = "simulation.json";

const PREPARE_MS: u64 = 1_000;
const DURATION_QUANTUM_MS: u64 = 500;

/// Shared millisecond clock.
#[derive(Debug, Clone)]
pub struct VirtualClock(Arc<AtomicU64>);

impl VirtualClock {
    pub fn new(start_ms: u64) -> Self {
        Self(Arc::new(AtomicU64::new(start_ms)))
    }

    pub fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }

    /// Seconds since the epoch.
    pub fn now(&self) -> f64 {
        ms_to_s(self.now_ms())
    }

    pub fn advance_ms(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }
}

fn ms_to_s(ms: u64) -> f64 {
    ms as f64 / 1000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub seed: u64,
    /// Wall energy per unit of chip energy.
    pub hw_slope: f64,
    /// Wall energy per job beyond the proportional part, joules.
    pub hw_intercept: f64,
    /// Standard deviation of the per-execution wall-energy offset, joules.
    pub energy_noise: f64,
    pub chip_interval: f64,
    pub wall_interval: f64,
    /// Per-sample Gaussian noise, watts.
    pub chip_sample_noise: f64,
    pub wall_sample_noise: f64,
    pub idle_chip_w: f64,
    pub sequences: usize,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            seed: 0,
            hw_slope: 1.35,
            hw_intercept: 120.0,
            energy_noise: 1.0,
            chip_interval: 0.1,
            wall_interval: 0.5,
            chip_sample_noise: 0.1,
            wall_sample_noise: 0.2,
            idle_chip_w: 12.0,
            sequences: 3,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Activity {
    start_ms: u64,
    end_ms: u64,
    chip_load: f64,
    /// Joules the wall meter sees on top of `slope · chip`.
    wall_extra: f64,
}

/// The simulated machine that executors load and meters observe.
#[derive(Debug)]
pub struct Workstation {
    params: SimParams,
    activities: Vec<Activity>,
    rng: ChaCha8Rng,
}

impl Workstation {
    fn active(&self, t_ms: u64) -> Option<&Activity> {
        let k = self.activities.partition_point(|a| a.start_ms <= t_ms);
        let a = self.activities.get(k.checked_sub(1)?)?;
        (t_ms <= a.end_ms).then_some(a)
    }

    fn power(&self, scope: Scope, t_ms: u64) -> f64 {
        let act = self.active(t_ms);
        let chip = self.params.idle_chip_w + act.map_or(0.0, |a| a.chip_load);
        match scope {
            Scope::Chip => chip,
            Scope::Wall => {
                let extra = act.map_or(0.0, |a| {
                    a.wall_extra / ms_to_s(a.end_ms - a.start_ms)
                });
                self.params.hw_slope * chip + extra
            }
        }
    }
}

/// Clock plus workstation; hands out the executor and meters.
#[derive(Debug, Clone)]
pub struct SimBench {
    clock: VirtualClock,
    station: Arc<Mutex<Workstation>>,
}

fn stream_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn lock(station: &Mutex<Workstation>) -> MutexGuard<'_, Workstation> {
    station.lock().unwrap_or_else(|p| p.into_inner())
}

impl SimBench {
    pub fn new(params: SimParams) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(stream_seed(params.seed, 0));
        Self {
            clock: VirtualClock::new(SIM_EPOCH_MS),
            station: Arc::new(Mutex::new(Workstation {
                params,
                activities: Vec::new(),
                rng,
            })),
        }
    }

    pub fn clock(&self) -> &VirtualClock {
        &self.clock
    }

    pub fn params(&self) -> SimParams {
        lock(&self.station).params.clone()
    }

    pub fn executor(&self) -> SimExecutor {
        SimExecutor {
            bench: self.clone(),
            fail_when: None,
        }
    }

    /// A meter observing the workstation; `stream` separates noise streams.
    pub fn meter(&self, spec: MeterSpec, sample_noise: f64, stream: u64) -> SimMeter {
        let seed = stream_seed(self.params().seed, stream + 1);
        SimMeter {
            spec,
            bench: self.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            sample_noise,
            started_ms: None,
        }
    }

    /// Chip-scope and wall-scope meters with the configured intervals.
    pub fn standard_meters(&self) -> Vec<SimMeter> {
        let p = self.params();
        vec![
            self.meter(sim_meter_spec("rapl", Scope::Chip, p.chip_interval), p.chip_sample_noise, 0),
            self.meter(
                sim_meter_spec("wattmeter", Scope::Wall, p.wall_interval),
                p.wall_sample_noise,
                1,
            ),
        ]
    }
}

pub fn sim_meter_spec(meter_id: &str, scope: Scope, interval: f64) -> MeterSpec {
    MeterSpec {
        meter_id: meter_id.into(),
        kind: MeterKind::Synthetic,
        scope,
        nominal_interval: interval,
        domains: Vec::new(),
        powercap_root: None,
    }
}

/// FNV-1a; a stable per-sequence content factor.
fn complexity(sequence_id: &str) -> f64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in sequence_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    0.8 + 0.45 * (h % 1000) as f64 / 1000.0
}

/// Run time (s), chip load (W) and output size (bytes) of a job.
fn job_model(w: &Workload) -> (f64, f64, Option<u64>) {
    let p = &w.params;
    let pxr = p.resolution.pixels() as f64 / Resolution::R2160.pixels() as f64;
    let fpsr = f64::from(p.fps.get()) / 30.0;
    let c = complexity(&w.sequence_id);
    let crf = f64::from(p.crf.get());
    let x265 = p.codec == Codec::X265;
    let media = w.media_duration / 20.0;
    match p.process {
        Process::Encode => {
            let codec_f = if x265 { 2.5 } else { 1.0 };
            let secs = 12.0 * pxr * fpsr * codec_f * (1.0 + (50.0 - crf) / 80.0) * c * media;
            let load = 40.0 + 12.0 * pxr + if x265 { 6.0 } else { 0.0 };
            let kbps = 8000.0
                * pxr
                * fpsr.powf(0.7)
                * 2f64.powf(-(crf - 30.0) / 8.0)
                * if x265 { 0.65 } else { 1.0 }
                * c;
            let bytes = (kbps * 1000.0 / 8.0 * w.media_duration).round().max(1.0) as u64;
            (secs, load, Some(bytes))
        }
        Process::Decode | Process::Idle => {
            let codec_f = if x265 { 1.3 } else { 1.0 };
            let secs = 2.0 * pxr * fpsr * codec_f * (1.0 + (50.0 - crf) / 160.0) * c * media;
            let load = 16.0 + 6.0 * pxr + if x265 { 2.0 } else { 0.0 };
            (secs, load, None)
        }
    }
}

fn quantize_ms(secs: f64) -> u64 {
    let q = DURATION_QUANTUM_MS as f64;
    let ms = ((secs * 1000.0) / q).ceil().max(1.0) * q;
    ms as u64
}

type FailPredicate = Box<dyn Fn(&Workload) -> bool + Send>;

/// Executes commands against the simulated workstation.
pub struct SimExecutor {
    bench: SimBench,
    fail_when: Option<FailPredicate>,
}

impl SimExecutor {
    /// Jobs matching `predicate` exit with status 1.
    pub fn fail_when(mut self, predicate: impl Fn(&Workload) -> bool + Send + 'static) -> Self {
        self.fail_when = Some(Box::new(predicate));
        self
    }

    // contents name only the file so runs in different directories match byte for byte
    fn touch(path: &Path) -> Result<(), ExecError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| ExecError::Other(e.to_string()))?;
        }
        let name = path.file_name().unwrap_or_default().to_string_lossy();
        fs::write(path, format!("simulated: {name}\n"))
            .map_err(|e| ExecError::Other(format!("{}: {e}", path.display())))
    }
}

impl Executor for SimExecutor {
    fn execute(&mut self, command: &JobCommand) -> Result<Execution, ExecError> {
        let clock = &self.bench.clock;
        let start_ms = clock.now_ms();
        let Some(workload) = &command.workload else {
            clock.advance_ms(PREPARE_MS);
            let mut size = None;
            if let Some(out) = &command.output {
                Self::touch(out)?;
                size = fs::metadata(out).ok().map(|m| m.len());
            }
            return Ok(Execution {
                start: ms_to_s(start_ms),
                end: clock.now(),
                exit_status: 0,
                output_size: size,
            });
        };

        let (secs, load, size) = job_model(workload);
        let duration_ms = quantize_ms(secs);
        let end_ms = start_ms + duration_ms;
        let mut station = lock(&self.bench.station);
        // drawn for every execution so the noise sequence is independent of outcomes
        let z: f64 = station.rng.sample(StandardNormal);
        let failed = self.fail_when.as_ref().is_some_and(|f| f(workload));
        let wall_extra = station.params.hw_intercept + station.params.energy_noise * z;
        station.activities.push(Activity {
            start_ms,
            end_ms,
            chip_load: load,
            wall_extra,
        });
        drop(station);
        clock.advance_ms(duration_ms);

        let mut output_size = None;
        if !failed {
            if let Some(out) = &command.output {
                Self::touch(out)?;
                output_size = size;
            }
        }
        Ok(Execution {
            start: ms_to_s(start_ms),
            end: ms_to_s(end_ms),
            exit_status: i32::from(failed),
            output_size,
        })
    }

    fn settle(&mut self, seconds: f64) {
        if seconds > 0.0 {
            self.bench.clock.advance_ms((seconds * 1000.0).round() as u64);
        }
    }
}

/// A meter sampling the simulated workstation on its own grid.
#[derive(Debug)]
pub struct SimMeter {
    spec: MeterSpec,
    bench: SimBench,
    rng: ChaCha8Rng,
    sample_noise: f64,
    started_ms: Option<u64>,
}

impl Meter for SimMeter {
    fn spec(&self) -> &MeterSpec {
        &self.spec
    }

    fn start(&mut self) -> Result<(), SourceError> {
        if self.started_ms.is_some() {
            return Err(SourceError::AlreadyRunning);
        }
        self.started_ms = Some(self.bench.clock.now_ms());
        Ok(())
    }

    fn stop(&mut self) -> Result<PowerTrace, SourceError> {
        let start = self.started_ms.take().ok_or(SourceError::NotRunning)?;
        let end = self.bench.clock.now_ms();
        let step = (self.spec.nominal_interval * 1000.0).round().max(1.0) as u64;
        let station = lock(&self.bench.station);
        let mut samples = Vec::with_capacity(((end - start) / step + 1) as usize);
        let mut t = start;
        while t <= end {
            let noise: f64 = self.rng.sample(StandardNormal);
            let p = station.power(self.spec.scope, t) + self.sample_noise * noise;
            samples.push(PowerSample::new(ms_to_s(t), p.max(0.0)));
            t += step;
        }
        Ok(PowerTrace::with_samples(
            self.spec.meter_id.clone(),
            self.spec.nominal_interval,
            samples,
        ))
    }
}

/// Sequence ids, frame rates and durations used by [`simulation_config`].
pub fn sim_sequences(count: usize) -> Vec<SequenceSpec> {
    const FPS: [u32; 4] = [24, 30, 60, 15];
    (0..count)
        .map(|i| {
            let id = format!("seq{:02}", i + 1);
            SequenceSpec {
                path: PathBuf::from(format!("sources/{id}.yuv")),
                sequence_id: id,
                width: 3840,
                height: 2160,
                fps: Fps::new(FPS[i % FPS.len()]).expect("allowed fps"),
                pixel_format: "yuv420".into(),
                duration: 20.0,
            }
        })
        .collect()
}

/// Full factorial configuration over the simulated sequences.
pub fn simulation_config(params: &SimParams, out: &Path) -> PipelineConfig {
    PipelineConfig {
        sequences: sim_sequences(params.sequences),
        codecs: Codec::ALL.to_vec(),
        crf_set: Crf::all().collect(),
        resolutions: vec![Resolution::R2160, Resolution::R1080, Resolution::R720],
        meters: vec![
            sim_meter_spec("rapl", Scope::Chip, params.chip_interval),
            sim_meter_spec("wattmeter", Scope::Wall, params.wall_interval),
        ],
        reliability: ReliabilityParams::default(),
        encoder_binary: PathBuf::from("ffmpeg"),
        output_dir: out.to_path_buf(),
        idle_duration: 10.0,
    }
}

/// Runs the pipeline on the simulated workstation and writes the dataset
/// plus the simulation parameters to `out`.
pub fn run_simulation(params: &SimParams, out: &Path) -> Result<Dataset, PipelineError> {
    let config = simulation_config(params, out);
    let bench = SimBench::new(params.clone());
    let mut executor = bench.executor();
    let mut meters: Vec<Box<dyn Meter>> = bench
        .standard_meters()
        .into_iter()
        .map(|m| Box::new(m) as Box<dyn Meter>)
        .collect();
    let dataset = run_pipeline(&config, &mut executor, &mut meters)?;
    let path = out.join(SIM_PARAMS_FILE);
    let mut text = serde_json::to_string_pretty(params).expect("plain struct serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|source| PipelineError::OutputDir { path, source })?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::{extract_window, integrate_energy};
    use crate::job::JobParams;
    use crate::orchestrator::exec::{run_job, JobSpec};

    fn workload(process: Process, k: u32) -> Workload {
        Workload {
            sequence_id: "seq01".into(),
            params: JobParams::new(
                Codec::X264,
                process,
                Resolution::R1080,
                Fps::new(30).unwrap(),
                Crf::new(30).unwrap(),
                "yuv420",
                k,
            )
            .unwrap(),
            media_duration: 20.0 * f64::from(k),
        }
    }

    fn job(process: Process, out: Option<PathBuf>) -> JobSpec {
        let w = workload(process, 4);
        JobSpec {
            job_id: "j".into(),
            sequence_id: w.sequence_id.clone(),
            params: w.params.clone(),
            command: JobCommand {
                program: "ffmpeg".into(),
                args: vec![],
                output: out,
                workload: Some(w),
            },
        }
    }

    #[test]
    fn bitrate_falls_with_crf() {
        let mut last = u64::MAX;
        for crf in Crf::all() {
            let mut w = workload(Process::Encode, 1);
            w.params.crf = crf;
            let size = job_model(&w).2.unwrap();
            assert!(size < last);
            last = size;
        }
    }

    #[test]
    fn wall_energy_is_affine_in_chip_energy() {
        let params = SimParams {
            chip_sample_noise: 0.0,
            wall_sample_noise: 0.0,
            energy_noise: 0.0,
            ..Default::default()
        };
        let bench = SimBench::new(params.clone());
        let mut ex = bench.executor();
        let mut meters = bench.standard_meters();
        for m in &mut meters {
            m.start().unwrap();
        }
        ex.settle(0.5);
        let dir = tempfile::tempdir().unwrap();
        let rec = run_job(&job(Process::Encode, Some(dir.path().join("o.mp4"))), 0, &mut ex)
            .unwrap();
        ex.settle(0.5);
        let e: Vec<f64> = meters
            .iter_mut()
            .map(|m| {
                let t = m.stop().unwrap();
                let w = extract_window(&t, rec.start, rec.end, t.nominal_interval).unwrap();
                integrate_energy(&w).unwrap().energy
            })
            .collect();
        let expected = params.hw_slope * e[0] + params.hw_intercept;
        assert!((e[1] - expected).abs() < 1e-6 * expected, "{e:?} {expected}");
        assert!(rec.output_size.unwrap() > 0);
    }

    #[test]
    fn meter_lifecycle_and_idle() {
        let bench = SimBench::new(SimParams::default());
        let mut m = bench.standard_meters().remove(0);
        assert!(matches!(m.stop(), Err(SourceError::NotRunning)));
        m.start().unwrap();
        assert!(matches!(m.start(), Err(SourceError::AlreadyRunning)));
        bench.executor().settle(1.0);
        let t = m.stop().unwrap();
        assert_eq!(t.len(), 11);
        assert!(t.validate().is_empty());
        let mean = t.powers().sum::<f64>() / t.len() as f64;
        assert!((mean - 12.0).abs() < 0.5);
    }

    #[test]
    fn failing_jobs_report_status() {
        let bench = SimBench::new(SimParams::default());
        let mut ex = bench
            .executor()
            .fail_when(|w| w.params.process == Process::Decode);
        assert!(run_job(&job(Process::Decode, None), 0, &mut ex).is_err());
    }
}
