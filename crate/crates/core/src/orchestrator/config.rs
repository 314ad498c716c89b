//! Pipeline configuration (JSON).

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::job::{Codec, Crf, Fps, Resolution};
use crate::reliability::ReliabilityParams;
use crate::trace::MeterSpec;

/// Environment variable that overrides `encoder_binary`.
pub const ENCODER_ENV: &str = "CODECWATT_ENCODER";

pub const DEFAULT_IDLE_DURATION: f64 = 10.0;

/// A native source sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceSpec {
    pub sequence_id: String,
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub fps: Fps,
    #[serde(default = "default_pixel_format")]
    pub pixel_format: String,
    /// Seconds.
    pub duration: f64,
}

fn default_pixel_format() -> String {
    "yuv420".into()
}

impl SequenceSpec {
    /// Native resolution. Only valid after [`PipelineConfig::validate`].
    pub fn resolution(&self) -> Resolution {
        Resolution::from_dims(self.width, self.height).unwrap_or(Resolution::R2160)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub sequences: Vec<SequenceSpec>,
    pub codecs: Vec<Codec>,
    pub crf_set: Vec<Crf>,
    pub resolutions: Vec<Resolution>,
    pub meters: Vec<MeterSpec>,
    #[serde(default)]
    pub reliability: ReliabilityParams,
    #[serde(default = "default_encoder")]
    pub encoder_binary: PathBuf,
    pub output_dir: PathBuf,
    /// Seconds of idle sampling before the first job.
    #[serde(default = "default_idle_duration")]
    pub idle_duration: f64,
}

fn default_encoder() -> PathBuf {
    PathBuf::from("ffmpeg")
}

fn default_idle_duration() -> f64 {
    DEFAULT_IDLE_DURATION
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {}: {source}", path.display())]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("field `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("field `{field}`: {message}")]
    Constraint { field: String, message: String },
}

fn constraint(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Constraint {
        field: field.into(),
        message: message.into(),
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            ConfigError::Schema {
                field,
                message: e.into_inner().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (field, empty) in [
            ("sequences", self.sequences.is_empty()),
            ("codecs", self.codecs.is_empty()),
            ("crf_set", self.crf_set.is_empty()),
            ("resolutions", self.resolutions.is_empty()),
            ("meters", self.meters.is_empty()),
        ] {
            if empty {
                return Err(constraint(field, "must not be empty"));
            }
        }
        let mut ids = BTreeSet::new();
        for (i, s) in self.sequences.iter().enumerate() {
            if !ids.insert(&s.sequence_id) {
                return Err(constraint(
                    format!("sequences[{i}].sequence_id"),
                    "duplicate sequence id",
                ));
            }
            if (s.width, s.height) != Resolution::R2160.dims() {
                return Err(constraint(
                    format!("sequences[{i}]"),
                    "source sequences must be native 3840x2160",
                ));
            }
            if !(s.duration > 0.0) {
                return Err(constraint(format!("sequences[{i}].duration"), "must be > 0"));
            }
        }
        let mut meter_ids = BTreeSet::new();
        for (i, m) in self.meters.iter().enumerate() {
            m.validate()
                .map_err(|e| constraint(format!("meters[{i}]"), e.to_string()))?;
            if !meter_ids.insert(&m.meter_id) {
                return Err(constraint(format!("meters[{i}].meter_id"), "duplicate meter id"));
            }
        }
        self.reliability
            .validate()
            .map_err(|e| constraint("reliability", e.to_string()))?;
        if !(self.idle_duration > 0.0) {
            return Err(constraint("idle_duration", "must be > 0"));
        }
        Ok(())
    }

    /// Applies the encoder-binary environment override.
    pub fn apply_env(&mut self) {
        if let Some(bin) = std::env::var_os(ENCODER_ENV) {
            if !bin.is_empty() {
                self.encoder_binary = PathBuf::from(bin);
            }
        }
    }
}

/// Loads, validates and env-adjusts a configuration file.
pub fn parse_config(path: &Path) -> Result<PipelineConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let mut cfg = PipelineConfig::from_json(&text)?;
    cfg.apply_env();
    Ok(cfg)
}
