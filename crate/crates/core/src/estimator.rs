//! Region-speed and arrival-rate estimation from experimental statistics.
//!
//! Closed areas use two stages. First, a grid search over speed pairs fits
//! the experimental cross-correlation with simulated model correlations;
//! only the region-1 speed is kept. Second, a one-dimensional search over
//! the region-2 speed matches the experimental crossing probability against
//! the closed form for `N` walkers.

use std::fmt;
use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::analytic::{p_cross_n_closed, p_cross_open, p_cross_single, DomainError};
use crate::geometry::{Population, Scenario, ScenarioConfig};
use crate::rssi::ExperimentalStats;
use crate::simulator::{CrossCorrelation, ModelCorrelator, SimError};

pub const DEFAULT_GRID_MIN: f64 = 0.1;
pub const DEFAULT_GRID_MAX: f64 = 2.5;
pub const DEFAULT_GRID_STEP: f64 = 0.1;
pub const LOW_SPEED_MAX: f64 = 0.55;
pub const NORMAL_SPEED_MAX: f64 = 1.2;
/// NMSE observed in physical field trials (region 1, region 2, pooled).
/// Kept as a scale reference for simulated results.
pub const FIELD_TRIAL_NMSE: [f64; 3] = [0.11, 0.24, 0.18];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("cross-correlation unavailable: {0}")]
    DegenerateCorrelation(SimError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("the head count (or its average) must be known for this estimate")]
    UnknownPopulation,
    #[error("scenario mismatch: expected {expected}")]
    WrongScenario { expected: &'static str },
    #[error("no model correlation could be fitted")]
    NoModelFit,
    #[error("nothing to evaluate")]
    EmptyInput,
    #[error("no theta_max values given")]
    EmptyThetaList,
    #[error("invalid speed grid: {0}")]
    InvalidGrid(String),
}

/// Candidate speeds shared by both regions.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedGrid {
    values: Vec<f64>,
}

impl SpeedGrid {
    /// `min, min + step, ...` up to and including `max` (within 1e-9).
    /// Values are rounded to nine decimals so that grids built from the same
    /// arguments are bit-identical.
    pub fn new(min: f64, max: f64, step: f64) -> Result<Self, EstimateError> {
        if !(min > 0.0 && step > 0.0 && max >= min) || !(min.is_finite() && max.is_finite()) {
            return Err(EstimateError::InvalidGrid(format!(
                "need 0 < min <= max and step > 0 (got {min}, {max}, {step})"
            )));
        }
        let count = ((max - min) / step + 1e-9).floor() as usize + 1;
        let values = (0..count)
            .map(|i| ((min + i as f64 * step) * 1e9).round() / 1e9)
            .collect();
        Self::from_values(values)
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self, EstimateError> {
        if values.is_empty() {
            return Err(EstimateError::InvalidGrid("empty".into()));
        }
        if values.iter().any(|v| !(*v > 0.0)) || values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(EstimateError::InvalidGrid("speeds must be positive and increasing".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    /// All `(v1, v2)` pairs, ordered by `v1` then `v2`.
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.values
            .iter()
            .flat_map(|&a| self.values.iter().map(move |&b| (a, b)))
            .collect()
    }
}

impl Default for SpeedGrid {
    fn default() -> Self {
        Self::new(DEFAULT_GRID_MIN, DEFAULT_GRID_MAX, DEFAULT_GRID_STEP).expect("valid default grid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SpeedLabel {
    Low,
    Normal,
    High,
}

impl fmt::Display for SpeedLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpeedLabel::Low => "Low",
            SpeedLabel::Normal => "Normal",
            SpeedLabel::High => "High",
        })
    }
}

/// Low up to 0.55 m/s, Normal up to 1.2 m/s, High above.
pub fn classify(v: f64) -> SpeedLabel {
    if v <= LOW_SPEED_MAX {
        SpeedLabel::Low
    } else if v <= NORMAL_SPEED_MAX {
        SpeedLabel::Normal
    } else {
        SpeedLabel::High
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedEstimate {
    pub v1_hat: f64,
    pub v2_hat: f64,
    /// Arrivals per second (open areas only).
    pub lambda_hat: Option<f64>,
    /// Sum of squared correlation differences at the stage-1 optimum.
    pub xcorr_residual: f64,
    /// Squared probability difference at the stage-2 optimum; zero when
    /// there is no second stage.
    pub pc_residual: f64,
    /// Region-2 speed of the stage-1 optimum (diagnostic only).
    pub stage1_v2: f64,
    pub labels: [SpeedLabel; 2],
}

fn xcorr_of(stats: &ExperimentalStats) -> Result<&CrossCorrelation, EstimateError> {
    stats
        .xcorr
        .as_ref()
        .map_err(|e| EstimateError::DegenerateCorrelation(e.clone()))
}

/// Sum of squared differences over the shared lags.
pub fn correlation_objective(experimental: &CrossCorrelation, model: &CrossCorrelation) -> f64 {
    experimental
        .values
        .iter()
        .zip(&model.values)
        .map(|(a, b)| (a - b).powi(2))
        .sum()
}

/// Best candidate pair by correlation fit. Objectives are computed in
/// parallel; the argmin scans in candidate order so ties resolve to the
/// earliest (smallest-speed) candidate.
pub fn fit_correlation(
    experimental: &CrossCorrelation,
    config: &ScenarioConfig,
    candidates: &[(f64, f64)],
    correlator: &ModelCorrelator,
) -> Result<((f64, f64), f64), EstimateError> {
    let max_lag = experimental.max_lag();
    let objectives: Vec<f64> = candidates
        .par_iter()
        .map(|&(v1, v2)| match &*correlator.get(v1, v2, config, max_lag) {
            Ok(model) => correlation_objective(experimental, model),
            Err(_) => f64::INFINITY,
        })
        .collect();
    let mut best: Option<usize> = None;
    for (i, obj) in objectives.iter().enumerate() {
        if obj.is_finite() && best.is_none_or(|b| *obj < objectives[b]) {
            best = Some(i);
        }
    }
    let best = best.ok_or(EstimateError::NoModelFit)?;
    Ok((candidates[best], objectives[best]))
}

/// Grid value of `v2` minimising `(target - model(v2))²`; ties go to the
/// smaller speed.
fn fit_probability<F>(target: f64, grid: &SpeedGrid, model: F) -> Result<(f64, f64), EstimateError>
where
    F: Fn(f64) -> Result<f64, DomainError>,
{
    let mut best: Option<(f64, f64)> = None;
    for &v2 in grid.values() {
        let obj = (target - model(v2)?).powi(2);
        if best.is_none_or(|(_, b)| obj < b) {
            best = Some((v2, obj));
        }
    }
    Ok(best.expect("grid is non-empty"))
}

/// Stage-2 objective for every grid speed (diagnostics and tests).
pub fn closed_stage2_objectives(
    p_exp: f64,
    v1: f64,
    n: u32,
    config: &ScenarioConfig,
    grid: &SpeedGrid,
) -> Result<Vec<f64>, EstimateError> {
    let m = &config.motion;
    grid.values()
        .iter()
        .map(|&v2| {
            let single = p_cross_single(v1, v2, m.time_step, &config.geometry, m.theta_max())?;
            Ok((p_exp - p_cross_n_closed(single.per_step, n)?.per_step).powi(2))
        })
        .collect()
}

/// Two-stage estimate for a closed area with a known head count.
pub fn estimate_closed(
    stats: &ExperimentalStats,
    config: &ScenarioConfig,
    grid: &SpeedGrid,
    correlator: &ModelCorrelator,
) -> Result<SpeedEstimate, EstimateError> {
    if config.motion.scenario != Scenario::Closed {
        return Err(EstimateError::WrongScenario { expected: "closed" });
    }
    let Population::Fixed(n) = config.population else {
        return Err(EstimateError::UnknownPopulation);
    };
    let xcorr = xcorr_of(stats)?;
    let ((v1, stage1_v2), xcorr_residual) = fit_correlation(xcorr, config, &grid.pairs(), correlator)?;
    let m = &config.motion;
    let (v2, pc_residual) = fit_probability(stats.p_exp_mean, grid, |v2| {
        let single = p_cross_single(v1, v2, m.time_step, &config.geometry, m.theta_max())?;
        Ok(p_cross_n_closed(single.per_step, n)?.per_step)
    })?;
    Ok(SpeedEstimate {
        v1_hat: v1,
        v2_hat: v2,
        lambda_hat: None,
        xcorr_residual,
        pc_residual,
        stage1_v2,
        labels: [classify(v1), classify(v2)],
    })
}

/// Arrival rate (per second) implied by the mean experimental crossing
/// probability.
pub fn estimate_arrival_rate(stats: &ExperimentalStats) -> f64 {
    stats.p_exp_mean / stats.dt()
}

/// Open-area estimate. With a known average occupancy both speeds are
/// estimated as in the closed case, inverting the open-area probability in
/// stage 2. Without it the area is treated as a single region and one speed
/// is fitted from the correlation alone.
pub fn estimate_open(
    stats: &ExperimentalStats,
    config: &ScenarioConfig,
    grid: &SpeedGrid,
    correlator: &ModelCorrelator,
) -> Result<SpeedEstimate, EstimateError> {
    if config.motion.scenario != Scenario::Open {
        return Err(EstimateError::WrongScenario { expected: "open" });
    }
    let lambda_hat = estimate_arrival_rate(stats);
    let xcorr = xcorr_of(stats)?;
    match config.population.count() {
        None => {
            let diagonal: Vec<(f64, f64)> = grid.values().iter().map(|&v| (v, v)).collect();
            let ((v, _), xcorr_residual) = fit_correlation(xcorr, config, &diagonal, correlator)?;
            Ok(SpeedEstimate {
                v1_hat: v,
                v2_hat: v,
                lambda_hat: Some(lambda_hat),
                xcorr_residual,
                pc_residual: 0.0,
                stage1_v2: v,
                labels: [classify(v); 2],
            })
        }
        Some(n_avg) => {
            let ((v1, stage1_v2), xcorr_residual) = fit_correlation(xcorr, config, &grid.pairs(), correlator)?;
            let m = &config.motion;
            let (v2, pc_residual) = fit_probability(stats.p_exp_mean, grid, |v2| {
                Ok(p_cross_open(v1, v2, m.time_step, &config.geometry, n_avg)?.per_step)
            })?;
            Ok(SpeedEstimate {
                v1_hat: v1,
                v2_hat: v2,
                lambda_hat: Some(lambda_hat),
                xcorr_residual,
                pc_residual,
                stage1_v2,
                labels: [classify(v1), classify(v2)],
            })
        }
    }
}

/// Dispatch on the configured scenario.
pub fn estimate(
    stats: &ExperimentalStats,
    config: &ScenarioConfig,
    grid: &SpeedGrid,
    correlator: &ModelCorrelator,
) -> Result<SpeedEstimate, EstimateError> {
    match config.motion.scenario {
        Scenario::Closed => estimate_closed(stats, config, grid, correlator),
        Scenario::Open => estimate_open(stats, config, grid, correlator),
    }
}

/// Squared relative error `((v_hat - v)/v)²`.
pub fn nse(v_hat: f64, v: f64) -> f64 {
    ((v_hat - v) / v).powi(2)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationRow {
    pub run_id: usize,
    pub v_true: [f64; 2],
    pub v_hat: [f64; 2],
    pub nse: [f64; 2],
    pub labels: [SpeedLabel; 2],
    pub true_labels: [SpeedLabel; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub rows: Vec<EvaluationRow>,
    pub nmse_v1: f64,
    pub nmse_v2: f64,
    pub nmse_any: f64,
    /// Every per-region NSE, region 1 then region 2 for each run.
    pub nse_samples: Vec<f64>,
    /// Fraction of region labels matching the true speed's label.
    pub classification_accuracy: f64,
}

/// Score estimates against true `(v1, v2)` pairs.
pub fn evaluate(runs: &[([f64; 2], SpeedEstimate)]) -> Result<EvaluationReport, EstimateError> {
    if runs.is_empty() {
        return Err(EstimateError::EmptyInput);
    }
    let rows: Vec<EvaluationRow> = runs
        .iter()
        .enumerate()
        .map(|(run_id, (truth, est))| {
            let v_hat = [est.v1_hat, est.v2_hat];
            EvaluationRow {
                run_id,
                v_true: *truth,
                v_hat,
                nse: [nse(v_hat[0], truth[0]), nse(v_hat[1], truth[1])],
                labels: est.labels,
                true_labels: [classify(truth[0]), classify(truth[1])],
            }
        })
        .collect();
    let n = rows.len() as f64;
    let nmse_v1 = rows.iter().map(|r| r.nse[0]).sum::<f64>() / n;
    let nmse_v2 = rows.iter().map(|r| r.nse[1]).sum::<f64>() / n;
    let nse_samples: Vec<f64> = rows.iter().flat_map(|r| r.nse).collect();
    let correct = rows
        .iter()
        .flat_map(|r| r.labels.iter().zip(&r.true_labels))
        .filter(|(a, b)| a == b)
        .count();
    Ok(EvaluationReport {
        nmse_any: nse_samples.iter().sum::<f64>() / nse_samples.len() as f64,
        classification_accuracy: correct as f64 / nse_samples.len() as f64,
        rows,
        nmse_v1,
        nmse_v2,
        nse_samples,
    })
}

/// Empirical CDF points `(nse, fraction ≤ nse)` in ascending order.
pub fn nse_cdf(samples: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, v)| (*v, (i + 1) as f64 / n))
        .collect()
}

impl EvaluationReport {
    /// Per-run CSV followed by `#`-prefixed summary lines.
    pub fn write_csv<W: Write>(&self, mut w: W, header: &str) -> io::Result<()> {
        w.write_all(header.as_bytes())?;
        writeln!(w, "run_id,v1_true,v2_true,v1_hat,v2_hat,nse1,nse2,label1,label2")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{:.6},{:.6},{},{}",
                r.run_id, r.v_true[0], r.v_true[1], r.v_hat[0], r.v_hat[1], r.nse[0], r.nse[1], r.labels[0], r.labels[1]
            )?;
        }
        writeln!(w, "# runs = {}", self.rows.len())?;
        writeln!(w, "# nmse_v1 = {:.6}", self.nmse_v1)?;
        writeln!(w, "# nmse_v2 = {:.6}", self.nmse_v2)?;
        writeln!(w, "# nmse_any = {:.6}", self.nmse_any)?;
        writeln!(w, "# classification_accuracy = {:.6}", self.classification_accuracy)?;
        writeln!(
            w,
            "# field_trial_nmse_reference = {} / {} / {}",
            FIELD_TRIAL_NMSE[0], FIELD_TRIAL_NMSE[1], FIELD_TRIAL_NMSE[2]
        )?;
        Ok(())
    }

    pub fn write_cdf_csv<W: Write>(&self, mut w: W, header: &str) -> io::Result<()> {
        w.write_all(header.as_bytes())?;
        writeln!(w, "nse,cdf")?;
        for (x, c) in nse_cdf(&self.nse_samples) {
            writeln!(w, "{x:.6},{c:.6}")?;
        }
        Ok(())
    }
}

/// One simulated or measured run with known truth.
#[derive(Debug, Clone)]
pub struct Trial {
    pub truth: [f64; 2],
    pub stats: ExperimentalStats,
    pub config: ScenarioConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityRow {
    pub theta_max_deg: f64,
    pub report: EvaluationReport,
}

/// Re-estimate every trial under each assumed `theta_max` (degrees).
pub fn sensitivity_sweep(
    trials: &[Trial],
    grid: &SpeedGrid,
    theta_values_deg: &[f64],
    correlator: &ModelCorrelator,
) -> Result<Vec<SensitivityRow>, EstimateError> {
    if theta_values_deg.is_empty() {
        return Err(EstimateError::EmptyThetaList);
    }
    if trials.is_empty() {
        return Err(EstimateError::EmptyInput);
    }
    theta_values_deg
        .iter()
        .map(|&theta| {
            let runs = trials
                .iter()
                .map(|t| {
                    let mut config = t.config;
                    config.motion.theta_max_deg = theta;
                    estimate(&t.stats, &config, grid, correlator).map(|e| (t.truth, e))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(SensitivityRow {
                theta_max_deg: theta,
                report: evaluate(&runs)?,
            })
        })
        .collect()
}
