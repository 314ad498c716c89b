use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use codecwatt::analysis::{correlate_groups, select_meters, CorrelationReport, MeterPair};
use codecwatt::dataset::{write_csv_file, Dataset, IdleBaseline, IDLE_COLUMNS};
use codecwatt::orchestrator::{ingest_into_dataset, parse_config, run_pipeline, ProcessExecutor};
use codecwatt::report::{write_analysis, write_report};
use codecwatt::sim::run_simulation;
use codecwatt::sources::{ingest_meter_csv, open_live_meter, Meter};
use codecwatt::{measure_idle_baseline, MeterKind, MeterSpec, ReliabilityParams, Scope, SimParams};

const EXIT_CODES: &str = "\
Exit status:
  0  success
  2  usage error
  3  invalid configuration
  4  file or directory error
  5  measurement or pipeline failure
  6  analysis failure

Logging goes to standard error (RUST_LOG, default `info`); results are written
to files and their paths printed on standard output. The encoder binary named
in the configuration can be overridden with CODECWATT_ENCODER.";

#[derive(Parser)]
#[command(name = "codecwatt", version, about = "Energy benchmarking of video encode and decode jobs")]
#[command(after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the measurement pipeline described by a configuration file.
    Measure {
        #[arg(long)]
        config: PathBuf,
    },
    /// Attach an external meter's log to a dataset.
    Ingest(IngestArgs),
    /// Correlate wall-scope and chip-scope energies; writes table2.csv and fits.csv.
    Analyze(AnalyzeArgs),
    /// Write scatter data, the energy decomposition and a summary.
    Report(AnalyzeArgs),
    /// Measure idle power from a trace file or from the configured live meters.
    Idle(IdleArgs),
    /// Run the pipeline on a simulated workstation, then analyze and report.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Chip,
    Wall,
}

#[derive(Args)]
struct IngestArgs {
    /// Dataset directory written by `measure`.
    #[arg(long)]
    dataset: PathBuf,
    /// Meter log in `timestamp,power` CSV form.
    #[arg(long)]
    meter_csv: PathBuf,
    #[arg(long)]
    meter_id: String,
    /// Nominal sampling interval of the meter, seconds.
    #[arg(long)]
    interval: f64,
    #[arg(long, value_enum, default_value = "wall")]
    scope: ScopeArg,
    #[arg(long, default_value_t = codecwatt::reliability::DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = codecwatt::reliability::DEFAULT_N_MIN)]
    n_min: usize,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Dataset directory.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output directory; defaults to the dataset directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Reference meter; defaults to the first wall-scope meter.
    #[arg(long)]
    hw_meter: Option<String>,
    /// Estimating meter; defaults to the first chip-scope meter.
    #[arg(long)]
    sw_meter: Option<String>,
}

#[derive(Args)]
struct IdleArgs {
    /// Trace CSV recorded with no job running.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    trace: Option<PathBuf>,
    /// Meter id for `--trace`.
    #[arg(long, default_value = "meter")]
    meter_id: String,
    /// Sampling interval for `--trace`, seconds.
    #[arg(long, default_value_t = 1.0)]
    interval: f64,
    /// Sample every live meter of this configuration instead.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seconds to sample with `--config`.
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    /// Output CSV.
    #[arg(long, default_value = "idle.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Standard deviation of the per-job wall-energy noise, joules.
    #[arg(long)]
    noise: Option<f64>,
    /// Number of simulated source sequences.
    #[arg(long)]
    sequences: Option<usize>,
}

enum Failure {
    Config(String),
    Io(String),
    Pipeline(String),
    Analysis(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 3,
            Failure::Io(_) => 4,
            Failure::Pipeline(_) => 5,
            Failure::Analysis(_) => 6,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Io(m) | Failure::Pipeline(m) | Failure::Analysis(m) => m,
        }
    }
}

fn pipeline_failure(e: codecwatt::PipelineError) -> Failure {
    use codecwatt::PipelineError as E;
    match e {
        E::Config(e) => Failure::Config(e.to_string()),
        e @ (E::Dataset(_) | E::OutputDir { .. }) => Failure::Io(e.to_string()),
        e => Failure::Pipeline(e.to_string()),
    }
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn open_meters(specs: &[MeterSpec]) -> Result<Vec<Box<dyn Meter>>, Failure> {
    let mut meters = Vec::new();
    for spec in specs {
        match open_live_meter(spec) {
            Ok(Some(m)) => meters.push(m),
            Ok(None) => log::info!("meter {} is offline; ingest its log afterwards", spec.meter_id),
            Err(e) => return Err(Failure::Pipeline(format!("meter {}: {e}", spec.meter_id))),
        }
    }
    Ok(meters)
}

fn measure(config: &Path) -> Result<(), Failure> {
    let config = parse_config(config).map_err(|e| match e {
        codecwatt::orchestrator::ConfigError::Read { .. } => Failure::Io(e.to_string()),
        e => Failure::Config(e.to_string()),
    })?;
    let mut meters = open_meters(&config.meters)?;
    let dataset = run_pipeline(&config, &mut ProcessExecutor, &mut meters).map_err(pipeline_failure)?;
    if !dataset.failures.is_empty() {
        log::warn!("{} cells failed; see failures.jsonl", dataset.failures.len());
    }
    println!("{}", config.output_dir.display());
    Ok(())
}

fn ingest(a: &IngestArgs) -> Result<(), Failure> {
    let spec = MeterSpec {
        meter_id: a.meter_id.clone(),
        kind: MeterKind::ExternalHardware,
        scope: match a.scope {
            ScopeArg::Chip => Scope::Chip,
            ScopeArg::Wall => Scope::Wall,
        },
        nominal_interval: a.interval,
        domains: Vec::new(),
        powercap_root: None,
    };
    spec.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let params = ReliabilityParams {
        alpha: a.alpha,
        n_min: a.n_min,
        ..Default::default()
    };
    params.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let log = File::open(&a.meter_csv)
        .map_err(|e| Failure::Io(format!("{}: {e}", a.meter_csv.display())))?;
    let summary = ingest_into_dataset(&a.dataset, &spec, BufReader::new(log), &params).map_err(
        |e| match e {
            codecwatt::orchestrator::IngestError::Dataset(e) => Failure::Io(e.to_string()),
            e => Failure::Pipeline(e.to_string()),
        },
    )?;
    log::info!(
        "meter {}: {} jobs measured, {} not covered by the log",
        a.meter_id,
        summary.measured,
        summary.skipped.len()
    );
    print_paths(&[a.dataset.join(codecwatt::dataset::MEASUREMENTS_FILE)]);
    Ok(())
}

fn load_and_correlate(
    a: &AnalyzeArgs,
) -> Result<(Dataset, MeterPair, Vec<CorrelationReport>, Vec<String>), Failure> {
    let dataset = Dataset::load(&a.input).map_err(|e| Failure::Io(e.to_string()))?;
    let meters = select_meters(&dataset, a.hw_meter.as_deref(), a.sw_meter.as_deref())
        .map_err(|e| Failure::Analysis(e.to_string()))?;
    let (reports, warnings) = correlate_groups(&dataset.measurements, &meters);
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok((dataset, meters, reports, warnings))
}

fn analyze(a: &AnalyzeArgs) -> Result<(), Failure> {
    let (_, _, reports, _) = load_and_correlate(a)?;
    if reports.is_empty() {
        return Err(Failure::Analysis(
            "no codec/process group has enough paired measurements".into(),
        ));
    }
    let out = a.out.as_deref().unwrap_or(&a.input);
    std::fs::create_dir_all(out).map_err(|e| Failure::Io(format!("{}: {e}", out.display())))?;
    let paths = write_analysis(out, &reports).map_err(|e| Failure::Io(e.to_string()))?;
    print_paths(&paths);
    Ok(())
}

fn report(a: &AnalyzeArgs) -> Result<(), Failure> {
    let (dataset, meters, reports, warnings) = load_and_correlate(a)?;
    let out = a.out.as_deref().unwrap_or(&a.input);
    std::fs::create_dir_all(out).map_err(|e| Failure::Io(format!("{}: {e}", out.display())))?;
    let paths = write_report(out, &dataset, &meters, &reports, &warnings)
        .map_err(|e| Failure::Io(e.to_string()))?;
    print_paths(&paths);
    Ok(())
}

fn idle(a: &IdleArgs) -> Result<(), Failure> {
    let mut rows = Vec::new();
    if let Some(path) = &a.trace {
        let spec = MeterSpec {
            meter_id: a.meter_id.clone(),
            kind: MeterKind::ExternalHardware,
            scope: Scope::Wall,
            nominal_interval: a.interval,
            domains: Vec::new(),
            powercap_root: None,
        };
        let f = File::open(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        let trace = ingest_meter_csv(BufReader::new(f), &spec)
            .map_err(|e| Failure::Pipeline(format!("{}: {e}", path.display())))?;
        let idle_w = measure_idle_baseline(&trace).map_err(|e| Failure::Pipeline(e.to_string()))?;
        rows.push(IdleBaseline {
            meter_id: a.meter_id.clone(),
            idle_w,
            n_samples: trace.len(),
        });
    } else if let Some(config) = &a.config {
        if !(a.duration > 0.0) {
            return Err(Failure::Config("--duration must be > 0".into()));
        }
        let config = parse_config(config).map_err(|e| Failure::Config(e.to_string()))?;
        let mut meters = open_meters(&config.meters)?;
        if meters.is_empty() {
            return Err(Failure::Config("no live meter in the configuration".into()));
        }
        for m in meters.iter_mut() {
            m.start()
                .map_err(|e| Failure::Pipeline(format!("meter {}: {e}", m.spec().meter_id)))?;
        }
        std::thread::sleep(Duration::from_secs_f64(a.duration));
        for m in meters.iter_mut() {
            let id = m.spec().meter_id.clone();
            let trace = m
                .stop()
                .map_err(|e| Failure::Pipeline(format!("meter {id}: {e}")))?;
            let idle_w = measure_idle_baseline(&trace)
                .map_err(|e| Failure::Pipeline(format!("meter {id}: {e}")))?;
            rows.push(IdleBaseline {
                meter_id: id,
                idle_w,
                n_samples: trace.len(),
            });
        }
    }
    write_csv_file(&a.out, IDLE_COLUMNS, &rows).map_err(|e| Failure::Io(e.to_string()))?;
    print_paths(std::slice::from_ref(&a.out));
    Ok(())
}

fn simulate(a: &SimulateArgs) -> Result<(), Failure> {
    let mut params = SimParams {
        seed: a.seed,
        ..Default::default()
    };
    if let Some(n) = a.noise {
        if !(n >= 0.0) {
            return Err(Failure::Config("--noise must be >= 0".into()));
        }
        params.energy_noise = n;
    }
    if let Some(n) = a.sequences {
        if n == 0 {
            return Err(Failure::Config("--sequences must be >= 1".into()));
        }
        params.sequences = n;
    }
    let dataset = run_simulation(&params, &a.out).map_err(pipeline_failure)?;
    let meters = select_meters(&dataset, None, None).map_err(|e| Failure::Analysis(e.to_string()))?;
    let (reports, warnings) = correlate_groups(&dataset.measurements, &meters);
    for w in &warnings {
        log::warn!("{w}");
    }
    let mut paths = vec![a.out.clone()];
    paths.extend(write_analysis(&a.out, &reports).map_err(|e| Failure::Io(e.to_string()))?);
    paths.extend(
        write_report(&a.out, &dataset, &meters, &reports, &warnings)
            .map_err(|e| Failure::Io(e.to_string()))?,
    );
    print_paths(&paths);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Measure { config } => measure(config),
        Command::Ingest(a) => ingest(a),
        Command::Analyze(a) => analyze(a),
        Command::Report(a) => report(a),
        Command::Idle(a) => idle(a),
        Command::Simulate(a) => simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
