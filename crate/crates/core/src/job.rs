//! Job parameters, execution records and per-job energy results.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Codec {
    X264,
    X265,
}

impl Codec {
    pub const ALL: [Codec; 2] = [Codec::X264, Codec::X265];

    /// Encoder library name passed to `-c:v`.
    pub fn encoder_library(self) -> &'static str {
        match self {
            Codec::X264 => "libx264",
            Codec::X265 => "libx265",
        }
    }
}

impl fmt::Display for Codec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Codec::X264 => "x264",
            Codec::X265 => "x265",
        })
    }
}

impl FromStr for Codec {
    type Err = ParamError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "x264" => Ok(Codec::X264),
            "x265" => Ok(Codec::X265),
            other => Err(ParamError::Codec(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Process {
    Encode,
    Decode,
    Idle,
}

impl fmt::Display for Process {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Process::Encode => "encode",
            Process::Decode => "decode",
            Process::Idle => "idle",
        })
    }
}

impl FromStr for Process {
    type Err = ParamError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "encode" => Ok(Process::Encode),
            "decode" => Ok(Process::Decode),
            "idle" => Ok(Process::Idle),
            other => Err(ParamError::Process(other.to_string())),
        }
    }
}

/// The three benchmark frame sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Resolution {
    R2160,
    R1080,
    R720,
}

impl Resolution {
    pub const ALL: [Resolution; 3] = [Resolution::R2160, Resolution::R1080, Resolution::R720];

    pub fn from_dims(width: u32, height: u32) -> Result<Self, ParamError> {
        Self::ALL
            .into_iter()
            .find(|r| r.dims() == (width, height))
            .ok_or(ParamError::Resolution { width, height })
    }

    pub fn dims(self) -> (u32, u32) {
        match self {
            Resolution::R2160 => (3840, 2160),
            Resolution::R1080 => (1920, 1080),
            Resolution::R720 => (1280, 720),
        }
    }

    pub fn width(self) -> u32 {
        self.dims().0
    }

    pub fn height(self) -> u32 {
        self.dims().1
    }

    pub fn pixels(self) -> u64 {
        let (w, h) = self.dims();
        u64::from(w) * u64::from(h)
    }

    /// Short label such as `1080p`.
    pub fn label(self) -> &'static str {
        match self {
            Resolution::R2160 => "2160p",
            Resolution::R1080 => "1080p",
            Resolution::R720 => "720p",
        }
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (w, h) = self.dims();
        write!(f, "{w}x{h}")
    }
}

impl FromStr for Resolution {
    type Err = ParamError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (w, h) = s
            .split_once('x')
            .ok_or_else(|| ParamError::ResolutionSyntax(s.to_string()))?;
        let w = w.trim().parse().map_err(|_| ParamError::ResolutionSyntax(s.to_string()))?;
        let h = h.trim().parse().map_err(|_| ParamError::ResolutionSyntax(s.to_string()))?;
        Self::from_dims(w, h)
    }
}

impl Serialize for Resolution {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Resolution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Frame rate restricted to the benchmark set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Fps(u32);

impl Fps {
    pub const ALLOWED: [u32; 4] = [15, 24, 30, 60];

    pub fn new(fps: u32) -> Result<Self, ParamError> {
        if Self::ALLOWED.contains(&fps) {
            Ok(Self(fps))
        } else {
            Err(ParamError::Fps(fps))
        }
    }

    pub fn get(self) -> u32 {
        self.0
    }
}

impl TryFrom<u32> for Fps {
    type Error = ParamError;

    fn try_from(v: u32) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<Fps> for u32 {
    fn from(f: Fps) -> u32 {
        f.0
    }
}

/// Constant rate factor restricted to the benchmark set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Crf(u32);

impl Crf {
    pub const ALLOWED: [u32; 5] = [10, 20, 30, 40, 50];

    pub fn new(crf: u32) -> Result<Self, ParamError> {
        if Self::ALLOWED.contains(&crf) {
            Ok(Self(crf))
        } else {
            Err(ParamError::Crf(crf))
        }
    }

    pub fn get(self) -> u32 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = Crf> {
        Self::ALLOWED.into_iter().map(Crf)
    }
}

impl TryFrom<u32> for Crf {
    type Error = ParamError;

    fn try_from(v: u32) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<Crf> for u32 {
    fn from(c: Crf) -> u32 {
        c.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParamError {
    #[error("unknown codec {0:?} (expected x264 or x265)")]
    Codec(String),
    #[error("unknown process {0:?}")]
    Process(String),
    #[error("resolution {width}x{height} is not one of 3840x2160, 1920x1080, 1280x720")]
    Resolution { width: u32, height: u32 },
    #[error("cannot parse resolution {0:?} (expected WIDTHxHEIGHT)")]
    ResolutionSyntax(String),
    #[error("fps {0} is not one of 15, 24, 30, 60")]
    Fps(u32),
    #[error("crf {0} is not one of 10, 20, 30, 40, 50")]
    Crf(u32),
    #[error("duplication factor must be >= 1")]
    Duplication,
}

/// Parameters of one encode, decode or idle job.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "JobParamsRepr", into = "JobParamsRepr")]
pub struct JobParams {
    pub codec: Codec,
    pub process: Process,
    pub resolution: Resolution,
    pub fps: Fps,
    pub crf: Crf,
    /// Chroma sampling tag, e.g. `yuv420`.
    pub pixel_format: String,
    duplication_factor: u32,
}

impl JobParams {
    pub fn new(
        codec: Codec,
        process: Process,
        resolution: Resolution,
        fps: Fps,
        crf: Crf,
        pixel_format: impl Into<String>,
        duplication_factor: u32,
    ) -> Result<Self, ParamError> {
        if duplication_factor == 0 {
            return Err(ParamError::Duplication);
        }
        Ok(Self {
            codec,
            process,
            resolution,
            fps,
            crf,
            pixel_format: pixel_format.into(),
            duplication_factor,
        })
    }

    pub fn duplication_factor(&self) -> u32 {
        self.duplication_factor
    }

    pub fn with_duplication(mut self, k: u32) -> Result<Self, ParamError> {
        if k == 0 {
            return Err(ParamError::Duplication);
        }
        self.duplication_factor = k;
        Ok(self)
    }

    pub fn with_process(mut self, process: Process) -> Self {
        self.process = process;
        self
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JobParamsRepr {
    codec: Codec,
    process: Process,
    width: u32,
    height: u32,
    fps: u32,
    crf: u32,
    pixel_format: String,
    duplication_factor: u32,
}

impl TryFrom<JobParamsRepr> for JobParams {
    type Error = ParamError;

    fn try_from(r: JobParamsRepr) -> Result<Self, Self::Error> {
        JobParams::new(
            r.codec,
            r.process,
            Resolution::from_dims(r.width, r.height)?,
            Fps::new(r.fps)?,
            Crf::new(r.crf)?,
            r.pixel_format,
            r.duplication_factor,
        )
    }
}

impl From<JobParams> for JobParamsRepr {
    fn from(p: JobParams) -> Self {
        Self {
            codec: p.codec,
            process: p.process,
            width: p.resolution.width(),
            height: p.resolution.height(),
            fps: p.fps.get(),
            crf: p.crf.get(),
            pixel_format: p.pixel_format,
            duplication_factor: p.duplication_factor,
        }
    }
}

/// One execution of a job, timestamped on the same clock as the samplers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub params: JobParams,
    pub start: f64,
    pub end: f64,
    pub exit_status: i32,
    /// Bytes written; encode jobs only.
    #[serde(default)]
    pub output_size: Option<u64>,
    pub repetition_index: u32,
    pub sequence_id: String,
    /// Seconds of video the job's input holds, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub media_duration: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecordError {
    #[error("job {0}: end must be after start")]
    Window(String),
    #[error("job {0}: successful encode must record a positive output size")]
    OutputSize(String),
}

impl JobRecord {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn validate(&self) -> Result<(), RecordError> {
        if !(self.end > self.start) {
            return Err(RecordError::Window(self.job_id.clone()));
        }
        if self.params.process == Process::Encode
            && self.exit_status == 0
            && !matches!(self.output_size, Some(n) if n > 0)
        {
            return Err(RecordError::OutputSize(self.job_id.clone()));
        }
        Ok(())
    }
}

/// Writes records as JSON lines.
pub fn write_jsonl<W: Write, T: Serialize>(mut w: W, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Reads JSON lines, skipping blank lines. Errors name the 1-based line.
pub fn read_jsonl<R: BufRead, T: for<'de> Deserialize<'de>>(r: R) -> Result<Vec<T>, JsonlError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let de = &mut serde_json::Deserializer::from_str(&line);
        let item = serde_path_to_error::deserialize(de).map_err(|e| JsonlError::Parse {
            line: i + 1,
            path: e.path().to_string(),
            source: e.into_inner(),
        })?;
        out.push(item);
    }
    Ok(out)
}

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("line {line}, field `{path}`: {source}")]
    Parse {
        line: usize,
        path: String,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Integrated energy for one (job, meter) pair, with the sample statistics the
/// reliability check ran on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyMeasurement {
    pub job_id: String,
    pub meter_id: String,
    /// Joules per execution.
    pub energy: f64,
    pub n_samples: usize,
    pub mean_power: f64,
    pub std_power: f64,
    pub reliable: bool,
    pub alpha: f64,
}

/// Split of a wall-scope job energy into processor, storage and background parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyDecomposition {
    pub e_total: f64,
    pub e_proc: f64,
    /// Always zero for decode jobs.
    pub e_strg: f64,
    pub e_x: f64,
    pub residual_negative: bool,
}
