//! Discretized Markov chains of the pedestrian motion.
//!
//! These chains are built explicitly and solved numerically. They act as an
//! independent check on the closed forms in [`crate::analytic`]: flat
//! per-region stationary levels, symmetric stochastic complements, and the
//! two-state aggregated chain whose stationary vector gives the region
//! occupancy probabilities.

use std::io::{self, Write};

use nalgebra::{DMatrix, Matrix2};
use thiserror::Error;

use crate::geometry::{DirectionMode, MotionParams, ScenarioConfig};

/// Angles per heading interval used when building position chains.
pub const DEFAULT_ANGLES_PER_INTERVAL: usize = 61;
pub const DEFAULT_POWER_TOLERANCE: f64 = 1e-13;
pub const DEFAULT_MAX_ITERATIONS: usize = 50_000_000;
/// Relative in-region deviation above which a stationary vector is not flat.
pub const FLATNESS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("region {region} moves {displacement} m per step, more than the grid step {grid_step} m")]
    AdjacencyViolation {
        region: u8,
        displacement: f64,
        grid_step: f64,
    },
    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("matrix is singular: {0}")]
    Singular(&'static str),
    #[error("regions are disconnected (no transitions between them)")]
    Disconnected,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Sparse row-major transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    rows: Vec<Vec<(usize, f64)>>,
}

impl TransitionMatrix {
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "transition matrix must be square");
        let rows = (0..m.nrows())
            .map(|i| {
                (0..m.ncols())
                    .filter(|&j| m[(i, j)] != 0.0)
                    .map(|j| (j, m[(i, j)]))
                    .collect()
            })
            .collect();
        Self { rows }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .iter()
            .find(|(c, _)| *c == j)
            .map_or(0.0, |(_, w)| *w)
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                m[(i, j)] += w;
            }
        }
        m
    }

    /// Largest `|row sum - 1|`.
    pub fn max_row_sum_error(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.iter().map(|(_, w)| w).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `out = x·P`.
    fn left_multiply(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (xi, row) in x.iter().zip(&self.rows) {
            for &(j, w) in row {
                out[j] += xi * w;
            }
        }
    }

    /// Triplet dump: one `row col value` line per nonzero entry.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                writeln!(w, "{i} {j} {v:e}")?;
            }
        }
        Ok(())
    }
}

/// Left eigenvector for eigenvalue 1 by power iteration, started from the
/// uniform vector. Stops once `‖xP − x‖₁ ≤ tolerance`.
pub fn power_iteration(
    matrix: &TransitionMatrix,
    tolerance: f64,
    max_iterations: usize,
) -> Result<Vec<f64>, OracleError> {
    let n = matrix.dim();
    if n == 0 {
        return Err(OracleError::InvalidArgument("empty matrix".into()));
    }
    let mut x = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for iter in 0..max_iterations {
        matrix.left_multiply(&x, &mut next);
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        // Checking every step costs as much as the multiply itself.
        if iter % 32 == 0 || iter + 1 == max_iterations {
            residual = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
            if residual <= tolerance {
                return Ok(next);
            }
        }
        std::mem::swap(&mut x, &mut next);
    }
    Err(OracleError::NotConverged {
        iterations: max_iterations,
        residual,
    })
}

/// Discrete heading set and its transition matrix.
#[derive(Debug, Clone)]
pub struct HeadingChain {
    pub angles: Vec<f64>,
    pub transition: DMatrix<f64>,
}

/// Evenly spaced heading set covering the allowed interval(s), endpoints
/// included. Bidirectional sets split `n_theta` over both intervals.
pub fn heading_set(theta_max: f64, mode: DirectionMode, n_theta: usize) -> Vec<f64> {
    let interval = |center: f64, m: usize| -> Vec<f64> {
        if m == 1 {
            return vec![center];
        }
        let step = 2.0 * theta_max / (m - 1) as f64;
        (0..m).map(|k| center - theta_max + k as f64 * step).collect()
    };
    match mode {
        DirectionMode::ForwardOnly => interval(0.0, n_theta),
        DirectionMode::Bidirectional => {
            let m = n_theta / 2;
            let mut out = interval(0.0, m);
            out.extend(interval(std::f64::consts::PI, m));
            out
        }
    }
}

pub fn build_heading_chain(motion: &MotionParams, n_theta: usize) -> Result<HeadingChain, OracleError> {
    if n_theta < 2 {
        return Err(OracleError::InvalidArgument(format!("n_theta must be >= 2, got {n_theta}")));
    }
    let mode = motion.direction_mode();
    if mode == DirectionMode::Bidirectional && !n_theta.is_multiple_of(2) {
        return Err(OracleError::InvalidArgument(format!(
            "bidirectional heading sets need an even n_theta, got {n_theta}"
        )));
    }
    let p = motion.heading_persistence;
    let off = (1.0 - p) / n_theta as f64;
    let transition = DMatrix::from_fn(n_theta, n_theta, |i, j| if i == j { p + off } else { off });
    Ok(HeadingChain {
        angles: heading_set(motion.theta_max(), mode, n_theta),
        transition,
    })
}

/// Markov chain of the cell index along x.
#[derive(Debug, Clone)]
pub struct PositionChain {
    pub grid_step: f64,
    /// Number of region-1 cells.
    pub n1: usize,
    /// Number of region-2 cells.
    pub n2: usize,
    pub transition: TransitionMatrix,
}

/// Coarsest grid that still keeps every move within one cell.
pub fn default_grid_step(config: &ScenarioConfig) -> f64 {
    let m = &config.motion;
    m.speed_region1.max(m.speed_region2) * m.time_step
}

pub fn build_position_chain(config: &ScenarioConfig, grid_step: f64) -> Result<PositionChain, OracleError> {
    build_position_chain_with(config, grid_step, DEFAULT_ANGLES_PER_INTERVAL)
}

/// Build the x-cell chain under a uniform heading over the bidirectional set.
///
/// A displacement of `d` cells (`|d| ≤ 1`) is split between the two
/// neighbouring cells so that the expected displacement is preserved: the
/// walker moves one cell with probability `|d|` and stays otherwise. Moves
/// past an outer wall are mirrored back into the edge cell.
pub fn build_position_chain_with(
    config: &ScenarioConfig,
    grid_step: f64,
    angles_per_interval: usize,
) -> Result<PositionChain, OracleError> {
    if !(grid_step.is_finite() && grid_step > 0.0) {
        return Err(OracleError::InvalidArgument(format!("grid step must be > 0, got {grid_step}")));
    }
    let m = &config.motion;
    let g = &config.geometry;
    for (region, v) in [(1u8, m.speed_region1), (2, m.speed_region2)] {
        let displacement = v * m.time_step;
        if displacement > grid_step * (1.0 + 1e-12) {
            return Err(OracleError::AdjacencyViolation {
                region,
                displacement,
                grid_step,
            });
        }
    }
    let n1 = (g.region1_width / grid_step).round() as usize;
    let n2 = (g.region2_width / grid_step).round() as usize;
    if n1 < 2 || n2 < 2 {
        return Err(OracleError::InvalidArgument("grid step too coarse for the regions".into()));
    }
    let n = n1 + n2;
    let angles = heading_set(m.theta_max(), DirectionMode::Bidirectional, 2 * angles_per_interval);
    let weight = 1.0 / angles.len() as f64;

    // Per-region probability of a one-cell move to the right (and, by
    // symmetry of the heading set, to the left).
    let move_prob = |v: f64| -> f64 {
        angles
            .iter()
            .map(|a| (v * m.time_step * a.cos() / grid_step).max(0.0))
            .sum::<f64>()
            * weight
    };
    let q = [move_prob(m.speed_region1), move_prob(m.speed_region2)];

    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let qi = if i < n1 { q[0] } else { q[1] };
        let left = if i == 0 { 0 } else { i - 1 };
        let right = if i == n - 1 { n - 1 } else { i + 1 };
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(3);
        let mut add = |j: usize, w: f64| {
            if let Some(e) = row.iter_mut().find(|(c, _)| *c == j) {
                e.1 += w;
            } else {
                row.push((j, w));
            }
        };
        add(i, 1.0 - 2.0 * qi);
        add(left, qi);
        add(right, qi);
        row.retain(|(_, w)| *w != 0.0);
        row.sort_by_key(|(j, _)| *j);
        rows.push(row);
    }
    Ok(PositionChain {
        grid_step,
        n1,
        n2,
        transition: TransitionMatrix { rows },
    })
}

impl PositionChain {
    pub fn dim(&self) -> usize {
        self.n1 + self.n2
    }

    /// Dense block `P_ij` for regions `i, j ∈ {1, 2}`.
    pub fn block(&self, i: usize, j: usize) -> DMatrix<f64> {
        let ranges = [0..self.n1, self.n1..self.dim()];
        let (ri, rj) = (ranges[i - 1].clone(), ranges[j - 1].clone());
        let mut out = DMatrix::zeros(ri.len(), rj.len());
        for (a, row) in ri.clone().enumerate() {
            for &(col, w) in self.transition.row(row) {
                if rj.contains(&col) {
                    out[(a, col - rj.start)] = w;
                }
            }
        }
        out
    }
}

/// Stationary law of a position chain with its per-region levels.
#[derive(Debug, Clone)]
pub struct StationaryDistribution {
    pub vector: Vec<f64>,
    pub n1: usize,
    /// Mean per-cell probability in region 1.
    pub region1_level: f64,
    /// Mean per-cell probability in region 2.
    pub region2_level: f64,
    /// Largest `|γ_i − level|/level` over both regions.
    pub max_relative_deviation: f64,
}

impl StationaryDistribution {
    pub fn is_flat(&self) -> bool {
        self.max_relative_deviation <= FLATNESS_TOLERANCE
    }

    /// Probability mass of each region, `(N1·c1, N2·c2)`.
    pub fn region_mass(&self) -> (f64, f64) {
        let n2 = self.vector.len() - self.n1;
        (self.region1_level * self.n1 as f64, self.region2_level * n2 as f64)
    }
}

pub fn stationary(chain: &PositionChain) -> Result<StationaryDistribution, OracleError> {
    stationary_with(chain, DEFAULT_POWER_TOLERANCE, DEFAULT_MAX_ITERATIONS)
}

pub fn stationary_with(
    chain: &PositionChain,
    tolerance: f64,
    max_iterations: usize,
) -> Result<StationaryDistribution, OracleError> {
    let vector = power_iteration(&chain.transition, tolerance, max_iterations)?;
    let (r1, r2) = vector.split_at(chain.n1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let (c1, c2) = (mean(r1), mean(r2));
    let dev = |s: &[f64], c: f64| s.iter().map(|v| (v - c).abs() / c).fold(0.0, f64::max);
    let max_relative_deviation = dev(r1, c1).max(dev(r2, c2));
    Ok(StationaryDistribution {
        vector,
        n1: chain.n1,
        region1_level: c1,
        region2_level: c2,
        max_relative_deviation,
    })
}

/// `S11 = P11 + P12 (I − P22)⁻¹ P21` and `S22 = P22 + P21 (I − P11)⁻¹ P12`
/// for a matrix partitioned after its first `n1` states.
pub fn stochastic_complements_of(
    p: &DMatrix<f64>,
    n1: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>), OracleError> {
    let n = p.nrows();
    if p.ncols() != n || n1 == 0 || n1 >= n {
        return Err(OracleError::InvalidArgument(format!(
            "cannot partition a {}x{} matrix after {n1} states",
            p.nrows(),
            p.ncols()
        )));
    }
    let n2 = n - n1;
    let p11 = p.view((0, 0), (n1, n1)).into_owned();
    let p12 = p.view((0, n1), (n1, n2)).into_owned();
    let p21 = p.view((n1, 0), (n2, n1)).into_owned();
    let p22 = p.view((n1, n1), (n2, n2)).into_owned();
    if p12.iter().all(|v| *v == 0.0) && p21.iter().all(|v| *v == 0.0) {
        return Err(OracleError::Disconnected);
    }
    let inv22 = (DMatrix::identity(n2, n2) - &p22)
        .lu()
        .try_inverse()
        .ok_or(OracleError::Singular("I - P22"))?;
    let inv11 = (DMatrix::identity(n1, n1) - &p11)
        .lu()
        .try_inverse()
        .ok_or(OracleError::Singular("I - P11"))?;
    let s11 = &p11 + &p12 * inv22 * &p21;
    let s22 = &p22 + &p21 * inv11 * &p12;
    Ok((s11, s22))
}

pub fn stochastic_complements(chain: &PositionChain) -> Result<(DMatrix<f64>, DMatrix<f64>), OracleError> {
    stochastic_complements_of(&chain.transition.to_dense(), chain.n1)
}

/// Two-state chain with `p_ij = 1ᵀ P_ij 1 / N_i`.
pub fn aggregated_chain(chain: &PositionChain) -> Matrix2<f64> {
    let mut agg = Matrix2::zeros();
    let sizes = [chain.n1, chain.n2];
    for i in 1..=2 {
        for j in 1..=2 {
            agg[(i - 1, j - 1)] = chain.block(i, j).sum() / sizes[i - 1] as f64;
        }
    }
    agg
}

/// Stationary vector of a two-state chain.
pub fn two_state_stationary(p: &Matrix2<f64>) -> Result<(f64, f64), OracleError> {
    let (p12, p21) = (p[(0, 1)], p[(1, 0)]);
    if p12 + p21 <= 0.0 {
        return Err(OracleError::Disconnected);
    }
    Ok((p21 / (p12 + p21), p12 / (p12 + p21)))
}

pub fn max_abs_asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).abs().max()
}

pub fn max_row_sum_error(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max)
}
