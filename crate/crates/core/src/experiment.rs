//! Simulated end-to-end experiments: simulate a scenario, render synthetic
//! RSSI, recover events through the dip pipeline and estimate speeds.

use rayon::prelude::*;
use thiserror::Error;

use crate::estimator::{estimate, evaluate, EstimateError, EvaluationReport, SpeedEstimate, SpeedGrid, Trial};
use crate::geometry::{AreaGeometry, Population, ScenarioConfig};
use crate::rssi::{trace_events, CalibrationTable, DipParams, ExperimentalStats, RssiError, SynthParams};
use crate::simulator::{default_max_lag, derive_seed, simulate, ModelCorrelator, SimError, SimOptions};

/// Baseline used for synthetic traces.
pub const SYNTHETIC_BASELINE_DB: f64 = -40.0;
/// Speeds combined pairwise in the standard sweep.
pub const SWEEP_SPEEDS: [f64; 3] = [0.3, 0.8, 1.6];

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Rssi(#[from] RssiError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
}

#[derive(Debug, Clone, Copy)]
pub struct PipelineSettings {
    pub calibration: CalibrationTable,
    pub dip: DipParams,
    pub noise_sigma_db: f64,
    /// Lag window; `None` derives it from the grid's slowest speed.
    pub max_lag: Option<usize>,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            calibration: CalibrationTable::synthetic(SYNTHETIC_BASELINE_DB),
            dip: DipParams::default(),
            noise_sigma_db: 0.0,
            max_lag: None,
        }
    }
}

/// Simulate `config`, pass its events through synthetic RSSI and the dip
/// pipeline, and summarise the recovered events.
pub fn simulated_stats(
    config: &ScenarioConfig,
    grid: &SpeedGrid,
    settings: &PipelineSettings,
) -> Result<ExperimentalStats, ExperimentError> {
    let sim = simulate(config, &SimOptions::default())?;
    let synth = SynthParams {
        noise_sigma_db: settings.noise_sigma_db,
        seed: derive_seed(config.rng_seed, &[0x5253_5349]),
        ..SynthParams::default()
    };
    let trace = crate::rssi::synthesize_rssi(&sim.events, &settings.calibration, &synth)?;
    let dt = config.motion.time_step;
    let events = trace_events(&trace, &settings.calibration, dt, &settings.dip)?;
    let max_lag = settings
        .max_lag
        .unwrap_or_else(|| default_max_lag(config.geometry.region1_width, grid.min(), dt, events[0].len()));
    Ok(ExperimentalStats::from_events(events, max_lag))
}

/// One simulated run and its estimate.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub trial: Trial,
    pub estimate: Result<SpeedEstimate, EstimateError>,
}

/// One run of a sweep.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub config: ScenarioConfig,
    pub truth: [f64; 2],
}

/// The nine speed pairs from [`SWEEP_SPEEDS`] for each head count and
/// geometry, each with its own seed derived from `master_seed`.
pub fn standard_runs(
    base: &ScenarioConfig,
    geometries: &[AreaGeometry],
    head_counts: &[u32],
    master_seed: u64,
) -> Vec<RunSpec> {
    let mut runs = Vec::new();
    for geometry in geometries {
        for &n in head_counts {
            for &v1 in &SWEEP_SPEEDS {
                for &v2 in &SWEEP_SPEEDS {
                    let mut config = base.with_speeds(v1, v2);
                    config.geometry = *geometry;
                    config.population = Population::Fixed(n);
                    config.rng_seed = derive_seed(master_seed, &[runs.len() as u64]);
                    runs.push(RunSpec { config, truth: [v1, v2] });
                }
            }
        }
    }
    runs
}

/// Simulate and estimate every run. Simulations run in parallel; model
/// correlations are shared through `correlator`.
pub fn run_trials(
    runs: &[RunSpec],
    grid: &SpeedGrid,
    settings: &PipelineSettings,
    correlator: &ModelCorrelator,
) -> Result<Vec<TrialOutcome>, ExperimentError> {
    let stats: Vec<ExperimentalStats> = runs
        .par_iter()
        .map(|r| simulated_stats(&r.config, grid, settings))
        .collect::<Result<_, _>>()?;
    Ok(runs
        .iter()
        .zip(stats)
        .map(|(r, stats)| {
            let estimate = estimate(&stats, &r.config, grid, correlator);
            TrialOutcome {
                trial: Trial {
                    truth: r.truth,
                    stats,
                    config: r.config,
                },
                estimate,
            }
        })
        .collect())
}

/// Score outcomes; a failed estimate is an error.
pub fn evaluate_outcomes(outcomes: &[TrialOutcome]) -> Result<EvaluationReport, ExperimentError> {
    let runs = outcomes
        .iter()
        .map(|o| o.estimate.clone().map(|e| (o.trial.truth, e)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(evaluate(&runs)?)
}
