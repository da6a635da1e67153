use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use crowdspeed::estimator::{DEFAULT_GRID_MAX, DEFAULT_GRID_MIN, DEFAULT_GRID_STEP};
use crowdspeed::experiment::SYNTHETIC_BASELINE_DB;
use crowdspeed::rssi::DEFAULT_DIP_THRESHOLD_DB;
use crowdspeed::simulator::DEFAULT_MODEL_STEPS;

#[derive(Debug, Parser)]
#[command(name = "crowdspeed", version, about = "Crowd speed estimation from a pair of WiFi links")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario and write its event sequences (and optionally
    /// trajectories and synthetic RSSI).
    Simulate(SimulateArgs),
    /// Turn an RSSI log into crossing statistics.
    Analyze(AnalyzeArgs),
    /// Estimate region speeds from events or an RSSI log.
    Estimate(EstimateArgs),
    /// Sanity-check a calibration table, optionally against a trace.
    CalibrateCheck(CalibrateCheckArgs),
    /// Run the invariant suite and print one line per property.
    Validate(ValidateArgs),
    /// Simulate and score the speed-pair grid, or a theta_max sensitivity
    /// table.
    Sweep(SweepArgs),
}

/// Where the scenario comes from, plus overrides.
#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    /// Scenario file (`key = value` lines).
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Bundled scenario: outdoor, indoor, museum or costco-aisle.
    #[arg(long)]
    pub preset: Option<String>,
    /// Master seed; every random stream derives from it.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "duration-s")]
    pub duration_s: Option<f64>,
    #[arg(long = "theta-max-deg")]
    pub theta_max_deg: Option<f64>,
    /// Region-1 speed (m/s).
    #[arg(long)]
    pub v1: Option<f64>,
    /// Region-2 speed (m/s).
    #[arg(long)]
    pub v2: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    #[arg(long = "grid-min", default_value_t = DEFAULT_GRID_MIN)]
    pub grid_min: f64,
    #[arg(long = "grid-max", default_value_t = DEFAULT_GRID_MAX)]
    pub grid_max: f64,
    #[arg(long = "grid-step", default_value_t = DEFAULT_GRID_STEP)]
    pub grid_step: f64,
    /// Largest correlation lag in steps; derived from the geometry when
    /// omitted.
    #[arg(long = "max-lag")]
    pub max_lag: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct DipArgs {
    /// Depth below baseline (dB) that starts a dip.
    #[arg(long = "dip-threshold-db", default_value_t = DEFAULT_DIP_THRESHOLD_DB)]
    pub dip_threshold_db: f64,
}

/// Event input: a simulated event CSV or an RSSI log with its calibration.
#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    #[arg(long, conflicts_with = "rssi", required_unless_present = "rssi")]
    pub events: Option<PathBuf>,
    #[arg(long, requires = "calibration")]
    pub rssi: Option<PathBuf>,
    #[arg(long)]
    pub calibration: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Head count (closed) or average head count (open).
    #[arg(long)]
    pub n: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write trajectories, one row per walker every this many steps.
    #[arg(long)]
    pub trajectories: Option<usize>,
    /// Also write a synthetic RSSI trace and its calibration table.
    #[arg(long = "rssi")]
    pub rssi: bool,
    /// Gaussian noise added to the synthetic RSSI (dB).
    #[arg(long = "noise-db", default_value_t = 0.0)]
    pub noise_db: f64,
    #[arg(long = "baseline-db", default_value_t = SYNTHETIC_BASELINE_DB, allow_negative_numbers = true)]
    pub baseline_db: f64,
    /// Also dump the discretized position chain as `row col value` triplets.
    #[arg(long = "dump-chain")]
    pub dump_chain: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub dip: DipArgs,
    /// Report path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the recovered event sequences here.
    #[arg(long = "events-out")]
    pub events_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Head count (closed) or average head count (open).
    #[arg(long)]
    pub n: Option<f64>,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub dip: DipArgs,
    /// Simulated steps behind each model correlation.
    #[arg(long = "model-steps", default_value_t = DEFAULT_MODEL_STEPS)]
    pub model_steps: usize,
    /// Report path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateCheckArgs {
    #[arg(long)]
    pub calibration: PathBuf,
    /// Compare the table's baselines with the median of this trace.
    #[arg(long)]
    pub rssi: Option<PathBuf>,
    /// Time window (s) for the baseline median; the whole trace by default.
    #[arg(long = "window-s", num_args = 2, value_names = ["START", "END"])]
    pub window_s: Option<Vec<f64>>,
    /// Largest acceptable baseline difference (dB).
    #[arg(long = "tolerance-db", default_value_t = 3.0)]
    pub tolerance_db: f64,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Head counts to sweep; the scenario's own when omitted.
    #[arg(long, value_delimiter = ',')]
    pub n: Vec<u32>,
    /// Presets whose geometries to sweep; the scenario's own when omitted.
    #[arg(long, value_delimiter = ',')]
    pub geometry: Vec<String>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub dip: DipArgs,
    #[arg(long = "model-steps", default_value_t = DEFAULT_MODEL_STEPS)]
    pub model_steps: usize,
    #[arg(long = "noise-db", default_value_t = 0.0)]
    pub noise_db: f64,
    /// Re-estimate under each assumed theta_max (degrees) and write a
    /// sensitivity table.
    #[arg(long = "theta-values", value_delimiter = ',')]
    pub theta_values: Vec<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}
