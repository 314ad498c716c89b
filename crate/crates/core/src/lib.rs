//! Energy measurement for video encode and decode benchmarks.
//!
//! Power traces come from on-chip energy counters, external meter logs or a
//! simulated workstation. Job windows are cut out of the traces and
//! integrated, jobs are repeated until the pooled samples pass a dispersion
//! test, and the resulting chip-scope and wall-scope energies are compared
//! with rank and linear correlations and a least-squares model.

pub mod align;
pub mod analysis;
pub mod dataset;
pub mod job;
pub mod orchestrator;
pub mod reliability;
pub mod report;
pub mod sim;
pub mod sources;
pub mod trace;

pub use align::{
    decompose_energy, extract_window, integrate_energy, mean_std, measure_idle_baseline,
    nearest_timestamp, AlignError, WindowEnergy,
};
pub use analysis::{
    average_ranks, correlate_groups, fit_linear, kendall, pearson, select_meters, spearman,
    AnalysisError, CorrelationReport, FitResult, MeterPair,
};
pub use dataset::{CellFailure, Dataset, DatasetError, IdleBaseline, MeasurementRow};
pub use job::{
    Codec, Crf, EnergyDecomposition, EnergyMeasurement, Fps, JobParams, JobRecord, ParamError,
    Process, Resolution,
};
pub use orchestrator::{
    build_decode_command, build_encode_command, build_prepare_commands, extract_bitrate,
    parse_config, run_job, run_pipeline, Executor, JobCommand, JobSpec, PipelineConfig,
    PipelineError, ProcessExecutor, SequenceSpec,
};
pub use reliability::{
    check_reliability, plan_duplication, run_until_reliable, t_critical, ReliabilityCheck,
    ReliabilityError, ReliabilityParams, ReliableRun, RunError,
};
pub use sim::{run_simulation, SimBench, SimExecutor, SimMeter, SimParams, VirtualClock};
pub use sources::{
    counters_to_power, ingest_meter_csv, open_live_meter, synth_trace, CounterReading, Meter,
    SourceError, SyntheticProfile,
};
pub use trace::{Domain, MeterKind, MeterSpec, PowerSample, PowerTrace, Scope, Violation};
