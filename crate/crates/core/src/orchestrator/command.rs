//! ffmpeg command lines for preparation, encode and decode jobs.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::job::{JobParams, Process, Resolution};

use super::config::SequenceSpec;

/// Pixel-format tag of planar 4:2:0 as the encoder spells it.
pub const PLANAR_420: &str = "yuv420p";

/// What an executor needs to know about a job beyond its command line.
#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub sequence_id: String,
    pub params: JobParams,
    /// Seconds of video the input holds (all duplicated copies).
    pub media_duration: f64,
}

/// A program invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct JobCommand {
    pub program: PathBuf,
    pub args: Vec<String>,
    /// File the command writes, if any.
    pub output: Option<PathBuf>,
    /// Set for benchmark jobs; `None` for preparation steps.
    pub workload: Option<Workload>,
}

impl JobCommand {
    fn new(program: &Path, args: Vec<String>, output: Option<PathBuf>) -> Self {
        Self {
            program: program.to_path_buf(),
            args,
            output,
            workload: None,
        }
    }

    pub fn with_workload(mut self, workload: Workload) -> Self {
        self.workload = Some(workload);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CommandError {
    #[error("expected a {expected} job, got {got}")]
    Process { expected: Process, got: Process },
    #[error("input {} does not exist", .0.display())]
    MissingInput(PathBuf),
    #[error("duplication factor must be >= 1")]
    Duplication,
}

/// Maps a chroma-sampling tag to the encoder's pixel-format name.
pub fn pixel_format_token(tag: &str) -> &str {
    match tag {
        "yuv420" | "420" => PLANAR_420,
        other => other,
    }
}

fn path_token(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// `-s WxH -r FPS -pix_fmt FMT -i INPUT -c:v LIB -crf CRF OUTPUT`
pub fn build_encode_command(
    program: &Path,
    params: &JobParams,
    input: &Path,
    output: &Path,
) -> Result<JobCommand, CommandError> {
    if params.process != Process::Encode {
        return Err(CommandError::Process {
            expected: Process::Encode,
            got: params.process,
        });
    }
    let args = vec![
        "-s".into(),
        params.resolution.to_string(),
        "-r".into(),
        params.fps.get().to_string(),
        "-pix_fmt".into(),
        pixel_format_token(&params.pixel_format).into(),
        "-i".into(),
        path_token(input),
        "-c:v".into(),
        params.codec.encoder_library().into(),
        "-crf".into(),
        params.crf.get().to_string(),
        path_token(output),
    ];
    Ok(JobCommand::new(program, args, Some(output.to_path_buf())))
}

/// `-i ENCODED -f null -`; decoded frames are discarded.
pub fn build_decode_command(program: &Path, encoded: &Path) -> Result<JobCommand, CommandError> {
    if !encoded.exists() {
        return Err(CommandError::MissingInput(encoded.to_path_buf()));
    }
    let args = vec![
        "-i".into(),
        path_token(encoded),
        "-f".into(),
        "null".into(),
        "-".into(),
    ];
    Ok(JobCommand::new(program, args, None))
}

/// Preparation steps for one (sequence, resolution, duplication) input.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparePlan {
    pub commands: Vec<JobCommand>,
    /// Raw file the encoder should read.
    pub input: PathBuf,
}

/// File name stem for a prepared input.
pub fn prepared_name(seq: &SequenceSpec, target: Resolution, k: u32) -> String {
    if k == 1 {
        format!("{}_{}.yuv", seq.sequence_id, target.label())
    } else {
        format!("{}_{}_x{k}.yuv", seq.sequence_id, target.label())
    }
}

/// Lanczos downscale (three lobes) from the native size when needed, then a
/// stream-copy concatenation of `k` copies when `k > 1`.
pub fn build_prepare_commands(
    program: &Path,
    seq: &SequenceSpec,
    target: Resolution,
    k: u32,
    work_dir: &Path,
) -> Result<PreparePlan, CommandError> {
    if k == 0 {
        return Err(CommandError::Duplication);
    }
    let pix = pixel_format_token(&seq.pixel_format).to_string();
    let fps = seq.fps.get().to_string();
    let native = seq.resolution();
    let mut commands = Vec::new();

    let scaled = if target == native {
        seq.path.clone()
    } else {
        let out = work_dir.join(prepared_name(seq, target, 1));
        let filter = format!(
            "scale={}:{}:flags=lanczos:param0=3",
            target.width(),
            target.height()
        );
        let args = vec![
            "-s".into(),
            native.to_string(),
            "-r".into(),
            fps.clone(),
            "-pix_fmt".into(),
            pix.clone(),
            "-i".into(),
            path_token(&seq.path),
            "-vf".into(),
            filter,
            "-f".into(),
            "rawvideo".into(),
            "-pix_fmt".into(),
            pix.clone(),
            path_token(&out),
        ];
        commands.push(JobCommand::new(program, args, Some(out.clone())));
        out
    };

    if k == 1 {
        return Ok(PreparePlan {
            commands,
            input: scaled,
        });
    }
    let out = work_dir.join(prepared_name(seq, target, k));
    let args = vec![
        "-f".into(),
        "rawvideo".into(),
        "-s".into(),
        target.to_string(),
        "-r".into(),
        fps,
        "-pix_fmt".into(),
        pix,
        "-stream_loop".into(),
        (k - 1).to_string(),
        "-i".into(),
        path_token(&scaled),
        "-c".into(),
        "copy".into(),
        "-f".into(),
        "rawvideo".into(),
        path_token(&out),
    ];
    commands.push(JobCommand::new(program, args, Some(out.clone())));
    Ok(PreparePlan {
        commands,
        input: out,
    })
}
