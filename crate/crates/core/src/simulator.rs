//! Discrete-time Monte Carlo simulation of pedestrians.
//!
//! Each pedestrian keeps its heading with probability `p` per step and
//! otherwise redraws it uniformly from the allowed interval(s). Position
//! advances with the speed of the region containing the *current* x. In the
//! closed scenario walkers reflect specularly off all four walls; in the open
//! scenario they reflect off the side walls and leave through the far end.
//!
//! Every pedestrian owns an independent random stream derived from the
//! master seed, so pedestrian `j` follows the same trajectory regardless of
//! how many others share the area.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{self, BufRead, Write};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rand_distr::{Distribution, Exp};
use serde::Serialize;
use thiserror::Error;

use crate::analytic::time_avg;
use crate::geometry::{AreaGeometry, MotionParams, Population, Scenario, ScenarioConfig};

/// Steps discarded before recording in the closed scenario.
pub const DEFAULT_BURN_IN_STEPS: usize = 10_000;
/// Length of the single-pedestrian runs behind model correlations.
pub const DEFAULT_MODEL_STEPS: usize = 200_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("sequence for link {link} is constant; correlation undefined")]
    DegenerateVariance { link: u8 },
    #[error("sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("sequences differ in time step ({0} vs {1})")]
    StepMismatch(f64, f64),
    #[error("max lag {max_lag} must be smaller than the sequence length {len}")]
    LagTooLong { max_lag: usize, len: usize },
    #[error("scenario mismatch: expected {expected}")]
    WrongScenario { expected: &'static str },
    #[error("malformed event file: {0}")]
    Format(String),
}

/// Derive a 64-bit seed from a master seed and a list of words (splitmix64
/// finalizer over each word).
pub fn derive_seed(master: u64, words: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    words.iter().fold(mix(master), |acc, w| mix(acc ^ mix(*w)))
}

/// Generator behind every simulated random draw.
pub type SimRng = Xoshiro256PlusPlus;

/// Random stream number `stream` of the master seed.
pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(seed, &[stream]))
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PedestrianState {
    pub x: f64,
    pub y: f64,
    /// Heading w.r.t. the x-axis, in `(-π, π]`.
    pub heading: f64,
    /// Flow direction in the open scenario: +1 walks towards +x.
    pub direction_sign: i8,
}

impl PedestrianState {
    /// Whether the walker is still inside the area along x.
    pub fn is_inside(&self, geom: &AreaGeometry) -> bool {
        (0.0..=geom.total_width()).contains(&self.x)
    }
}

/// Whether `heading` lies in the allowed set for this walker.
pub fn heading_allowed(heading: f64, theta_max: f64, motion: &MotionParams, direction_sign: i8) -> bool {
    let eps = 1e-9;
    let forward = heading.abs() <= theta_max + eps;
    let backward = (PI - heading.abs()) <= theta_max + eps;
    match motion.scenario {
        Scenario::Closed => forward || backward,
        Scenario::Open if direction_sign >= 0 => forward,
        Scenario::Open => backward,
    }
}

/// Uniform draw from the allowed heading set.
pub fn draw_heading<R: Rng + ?Sized>(motion: &MotionParams, direction_sign: i8, rng: &mut R) -> f64 {
    let theta_max = motion.theta_max();
    let u: f64 = rng.gen_range(-theta_max..=theta_max);
    let backward = match motion.scenario {
        Scenario::Closed => rng.gen_bool(0.5),
        Scenario::Open => direction_sign < 0,
    };
    if backward {
        wrap_angle(PI + u)
    } else {
        u
    }
}

/// Advance one pedestrian by one time step.
///
/// In the open scenario x is not reflected at the ends; a walker whose new x
/// lies outside `[0, B]` has left (see [`PedestrianState::is_inside`]).
pub fn step<R: Rng + ?Sized>(
    state: &PedestrianState,
    motion: &MotionParams,
    geom: &AreaGeometry,
    rng: &mut R,
) -> PedestrianState {
    advance(state, state.heading.sin_cos(), motion, geom, rng).0
}

/// [`step`] with the heading's `(sin, cos)` supplied by the caller. Also
/// reports whether the heading changed, so callers can keep the pair cached.
#[inline]
fn advance<R: Rng + ?Sized>(
    state: &PedestrianState,
    (sin, cos): (f64, f64),
    motion: &MotionParams,
    geom: &AreaGeometry,
    rng: &mut R,
) -> (PedestrianState, bool) {
    let speed = motion.speed_at(state.x, geom);
    let reach = speed * motion.time_step;
    let mut x = state.x + reach * cos;
    let mut y = state.y + reach * sin;
    let mut heading = state.heading;
    let mut turned = false;

    let length = geom.corridor_length;
    if y < 0.0 {
        y = -y;
        heading = -heading;
        turned = true;
    } else if y > length {
        y = 2.0 * length - y;
        heading = -heading;
        turned = true;
    }
    if motion.scenario == Scenario::Closed {
        let width = geom.total_width();
        if x < 0.0 {
            x = -x;
            heading = PI - heading;
            turned = true;
        } else if x > width {
            x = 2.0 * width - x;
            heading = PI - heading;
            turned = true;
        }
    }
    if turned {
        heading = wrap_angle(heading);
    }

    if motion.heading_persistence < 1.0 && !rng.gen_bool(motion.heading_persistence) {
        heading = draw_heading(motion, state.direction_sign, rng);
        turned = true;
    }
    let next = PedestrianState {
        x,
        y,
        heading,
        direction_sign: state.direction_sign,
    };
    (next, turned)
}

/// A pedestrian with its own random stream and cached heading components.
struct Walker {
    id: u64,
    state: PedestrianState,
    sin_cos: (f64, f64),
    rng: SimRng,
}

impl Walker {
    fn new(id: u64, state: PedestrianState, rng: SimRng) -> Self {
        Self {
            id,
            state,
            sin_cos: state.heading.sin_cos(),
            rng,
        }
    }

    /// Step once, returning the previous x.
    #[inline]
    fn advance(&mut self, motion: &MotionParams, geom: &AreaGeometry) -> f64 {
        let from = self.state.x;
        let (next, turned) = advance(&self.state, self.sin_cos, motion, geom, &mut self.rng);
        if turned {
            self.sin_cos = next.heading.sin_cos();
        }
        self.state = next;
        from
    }
}

/// Whether moving from `from` to `to` crosses the link at `link_x`.
///
/// Landing exactly on the link counts; leaving from exactly on it does not,
/// so a walker resting on the line is counted once.
#[inline]
pub fn crosses(from: f64, to: f64, link_x: f64) -> bool {
    let side = |v: f64| (v - link_x).partial_cmp(&0.0).map_or(0, |o| o as i8);
    let (s0, s1) = (side(from), side(to));
    s0 != 0 && s1 != s0
}

/// Per-step count of simultaneous crossings on one link.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventSequence {
    pub samples: Vec<u32>,
    /// Step length (s).
    pub dt: f64,
    pub link_id: u8,
}

impl EventSequence {
    pub fn zeros(n: usize, dt: f64, link_id: u8) -> Self {
        Self {
            samples: vec![0; n],
            dt,
            link_id,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 * self.dt
    }

    /// Number of steps with at least one crossing.
    pub fn event_count(&self) -> usize {
        self.samples.iter().filter(|&&v| v > 0).count()
    }

    /// The first `n` steps.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            samples: self.samples[..n.min(self.samples.len())].to_vec(),
            dt: self.dt,
            link_id: self.link_id,
        }
    }

    fn nonzero(&self) -> Vec<(usize, u32)> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0)
            .map(|(k, v)| (k, *v))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub ped_id: u64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    pub burn_in_steps: usize,
    /// Record a trajectory row every `n` steps; `None` records nothing.
    pub trajectory_stride: Option<usize>,
    /// Overrides the scenario's step count.
    pub steps: Option<usize>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            burn_in_steps: DEFAULT_BURN_IN_STEPS,
            trajectory_stride: None,
            steps: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub events: [EventSequence; 2],
    pub trajectories: Vec<TrajectoryRow>,
    /// Population averaged over recorded steps.
    pub mean_population: f64,
    pub final_population: usize,
    pub arrivals: usize,
    pub departures: usize,
}

/// Closed-scenario initial state: uniform position, uniform allowed heading.
fn initial_closed(config: &ScenarioConfig, rng: &mut SimRng) -> PedestrianState {
    let g = &config.geometry;
    let x = rng.gen_range(0.0..g.total_width());
    let y = rng.gen_range(0.0..g.corridor_length);
    let heading = draw_heading(&config.motion, 1, rng);
    PedestrianState {
        x,
        y,
        heading,
        direction_sign: 1,
    }
}

/// Receives crossing events as they happen, in nondecreasing step order.
trait EventSink {
    fn record(&mut self, link: usize, k: usize);
}

impl EventSink for [EventSequence; 2] {
    #[inline]
    fn record(&mut self, link: usize, k: usize) {
        self[link].samples[k] += 1;
    }
}

/// Nonzero `(step, count)` entries of an event sequence.
#[derive(Debug, Clone, Default)]
struct SparseEvents(Vec<(usize, u32)>);

impl EventSink for [SparseEvents; 2] {
    #[inline]
    fn record(&mut self, link: usize, k: usize) {
        let entries = &mut self[link].0;
        match entries.last_mut() {
            Some((last, count)) if *last == k => *count += 1,
            _ => entries.push((k, 1)),
        }
    }
}

#[inline]
fn record_crossings<S: EventSink + ?Sized>(from: f64, to: f64, links: [f64; 2], k: usize, sink: &mut S) {
    for (i, link) in links.into_iter().enumerate() {
        if crosses(from, to, link) {
            sink.record(i, k);
        }
    }
}

/// Closed area with a fixed head count.
pub fn simulate_closed(config: &ScenarioConfig, opts: &SimOptions) -> Result<SimulationOutput, SimError> {
    let n_people = closed_head_count(config)?;
    let steps = opts.steps.unwrap_or_else(|| config.n_steps());
    let dt = config.motion.time_step;
    let mut events = [EventSequence::zeros(steps, dt, 1), EventSequence::zeros(steps, dt, 2)];
    let trajectories = run_closed(config, opts, n_people, steps, &mut events);
    Ok(SimulationOutput {
        events,
        trajectories,
        mean_population: n_people as f64,
        final_population: n_people,
        arrivals: 0,
        departures: 0,
    })
}

fn closed_head_count(config: &ScenarioConfig) -> Result<usize, SimError> {
    if config.motion.scenario != Scenario::Closed {
        return Err(SimError::WrongScenario { expected: "closed" });
    }
    match config.population {
        Population::Fixed(n) => Ok(n as usize),
        _ => Err(SimError::WrongScenario { expected: "closed with a fixed head count" }),
    }
}

fn run_closed<S: EventSink + ?Sized>(
    config: &ScenarioConfig,
    opts: &SimOptions,
    n_people: usize,
    steps: usize,
    sink: &mut S,
) -> Vec<TrajectoryRow> {
    let (motion, geom) = (&config.motion, &config.geometry);
    let dt = motion.time_step;
    let links = geom.link_positions;

    let mut walkers: Vec<Walker> = (0..n_people as u64)
        .map(|id| {
            let mut rng = stream_rng(config.rng_seed, id);
            let state = initial_closed(config, &mut rng);
            Walker::new(id, state, rng)
        })
        .collect();
    for w in walkers.iter_mut() {
        for _ in 0..opts.burn_in_steps {
            w.advance(motion, geom);
        }
    }

    let mut trajectories = Vec::new();
    for k in 0..steps {
        if let Some(stride) = opts.trajectory_stride {
            if k % stride.max(1) == 0 {
                trajectories.extend(walkers.iter().map(|w| TrajectoryRow {
                    t: k as f64 * dt,
                    ped_id: w.id,
                    x: w.state.x,
                    y: w.state.y,
                    theta: w.state.heading,
                }));
            }
        }
        for w in walkers.iter_mut() {
            let from = w.advance(motion, geom);
            record_crossings(from, w.state.x, links, k, sink);
        }
    }
    trajectories
}

/// Open area: Poisson arrivals split between the two entrances, forward
/// walking, removal on reaching the far end.
pub fn simulate_open(config: &ScenarioConfig, opts: &SimOptions) -> Result<SimulationOutput, SimError> {
    if config.motion.scenario != Scenario::Open {
        return Err(SimError::WrongScenario { expected: "open" });
    }
    let rate = config.motion.arrival_rate().unwrap_or(0.0);
    simulate_open_with_rate(config, rate, opts)
}

fn simulate_open_with_rate(
    config: &ScenarioConfig,
    rate: f64,
    opts: &SimOptions,
) -> Result<SimulationOutput, SimError> {
    let steps = opts.steps.unwrap_or_else(|| config.n_steps());
    let dt = config.motion.time_step;
    let mut events = [EventSequence::zeros(steps, dt, 1), EventSequence::zeros(steps, dt, 2)];
    let tally = run_open(config, rate, opts, steps, &mut events);
    Ok(SimulationOutput {
        events,
        trajectories: tally.trajectories,
        mean_population: tally.mean_population,
        final_population: tally.final_population,
        arrivals: tally.arrivals,
        departures: tally.departures,
    })
}

struct OpenTally {
    trajectories: Vec<TrajectoryRow>,
    mean_population: f64,
    final_population: usize,
    arrivals: usize,
    departures: usize,
}

fn run_open<S: EventSink + ?Sized>(
    config: &ScenarioConfig,
    rate: f64,
    opts: &SimOptions,
    steps: usize,
    sink: &mut S,
) -> OpenTally {
    let (motion, geom) = (&config.motion, &config.geometry);
    let dt = motion.time_step;
    let links = geom.link_positions;
    let width = geom.total_width();

    // Stream 0 drives arrivals; arrival i walks on stream i + 1.
    let mut arrival_rng = stream_rng(config.rng_seed, 0);
    let inter_arrival = (rate > 0.0).then(|| Exp::new(rate).expect("positive rate"));
    let mut next_arrival = inter_arrival
        .as_ref()
        .map_or(f64::INFINITY, |d| d.sample(&mut arrival_rng));

    let mut walkers: Vec<Walker> = Vec::new();
    let mut trajectories = Vec::new();
    let (mut arrivals, mut departures) = (0usize, 0usize);
    let mut population_sum = 0.0;

    for k in 0..steps {
        let t = k as f64 * dt;
        while next_arrival <= t {
            let id = arrivals as u64;
            let mut rng = stream_rng(config.rng_seed, id + 1);
            let from_left = arrival_rng.gen_bool(motion.entrance1_fraction);
            let direction_sign = if from_left { 1 } else { -1 };
            let state = PedestrianState {
                x: if from_left { 0.0 } else { width },
                y: rng.gen_range(0.0..geom.corridor_length),
                heading: draw_heading(motion, direction_sign, &mut rng),
                direction_sign,
            };
            walkers.push(Walker::new(id, state, rng));
            arrivals += 1;
            next_arrival += inter_arrival.as_ref().expect("arrivals imply a rate").sample(&mut arrival_rng);
        }
        population_sum += walkers.len() as f64;
        if let Some(stride) = opts.trajectory_stride {
            if k % stride.max(1) == 0 {
                trajectories.extend(walkers.iter().map(|w| TrajectoryRow {
                    t,
                    ped_id: w.id,
                    x: w.state.x,
                    y: w.state.y,
                    theta: w.state.heading,
                }));
            }
        }
        for w in walkers.iter_mut() {
            let from = w.advance(motion, geom);
            record_crossings(from, w.state.x, links, k, sink);
        }
        let before = walkers.len();
        walkers.retain(|w| w.state.is_inside(geom));
        departures += before - walkers.len();
    }
    OpenTally {
        trajectories,
        mean_population: if steps > 0 { population_sum / steps as f64 } else { 0.0 },
        final_population: walkers.len(),
        arrivals,
        departures,
    }
}

/// Run whichever scenario the config declares.
pub fn simulate(config: &ScenarioConfig, opts: &SimOptions) -> Result<SimulationOutput, SimError> {
    match config.motion.scenario {
        Scenario::Closed => simulate_closed(config, opts),
        Scenario::Open => simulate_open(config, opts),
    }
}

/// Crossing counts from independent single walkers in the closed area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossingCounts {
    /// Walker-steps at which link 1 / link 2 was crossed.
    pub link: [u64; 2],
    pub walker_steps: u64,
}

impl CrossingCounts {
    pub fn frequency(&self, link: usize) -> f64 {
        self.link[link] as f64 / self.walker_steps as f64
    }
}

/// Count crossings of `walkers` independent closed-area walkers, each run
/// for `steps` after burn-in. Walkers run in parallel.
pub fn closed_crossing_counts(config: &ScenarioConfig, walkers: u64, steps: u64, burn_in: usize) -> CrossingCounts {
    use rayon::prelude::*;
    let (motion, geom) = (&config.motion, &config.geometry);
    let links = geom.link_positions;
    let per_walker: Vec<[u64; 2]> = (0..walkers)
        .into_par_iter()
        .map(|id| {
            let mut rng = stream_rng(config.rng_seed, id);
            let state = initial_closed(config, &mut rng);
            let mut w = Walker::new(id, state, rng);
            for _ in 0..burn_in {
                w.advance(motion, geom);
            }
            let mut counts = [0u64; 2];
            for _ in 0..steps {
                let from = w.advance(motion, geom);
                for (c, link) in counts.iter_mut().zip(links) {
                    *c += crosses(from, w.state.x, link) as u64;
                }
            }
            counts
        })
        .collect();
    let link = per_walker.iter().fold([0, 0], |acc, c| [acc[0] + c[0], acc[1] + c[1]]);
    CrossingCounts {
        link,
        walker_steps: walkers * steps,
    }
}

/// Histogram of x positions of `walkers` independent closed-area walkers,
/// each recorded for `steps` steps after burn-in, with `bins_per_region`
/// equal bins in each region. Returns the region-1 bins followed by the
/// region-2 bins.
pub fn x_occupancy(
    config: &ScenarioConfig,
    bins_per_region: usize,
    walkers: u64,
    steps: u64,
    burn_in: usize,
) -> Vec<u64> {
    use rayon::prelude::*;
    let (motion, geom) = (&config.motion, &config.geometry);
    let (b1, b2) = (geom.region1_width, geom.region2_width);
    let bins = 2 * bins_per_region;
    (0..walkers)
        .into_par_iter()
        .map(|id| {
            let mut rng = stream_rng(config.rng_seed, id);
            let state = initial_closed(config, &mut rng);
            let mut w = Walker::new(id, state, rng);
            for _ in 0..burn_in {
                w.advance(motion, geom);
            }
            let mut hist = vec![0u64; bins];
            for _ in 0..steps {
                w.advance(motion, geom);
                let x = w.state.x;
                let bin = if x < b1 {
                    ((x / b1) * bins_per_region as f64) as usize
                } else {
                    bins_per_region + (((x - b1) / b2) * bins_per_region as f64) as usize
                };
                hist[bin.min(bins - 1)] += 1;
            }
            hist
        })
        .reduce(
            || vec![0u64; bins],
            |mut acc, h| {
                acc.iter_mut().zip(h).for_each(|(a, b)| *a += b);
                acc
            },
        )
}

/// Sample cross-correlation `R(τ)` for `τ = 0..=max_lag`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossCorrelation {
    pub lags: Vec<usize>,
    pub values: Vec<f64>,
}

impl CrossCorrelation {
    pub fn max_lag(&self) -> usize {
        self.lags.last().copied().unwrap_or(0)
    }

    /// Lag of the largest value (earliest on ties).
    pub fn peak_lag(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        self.lags[best]
    }

    /// Largest absolute difference over the shared lags.
    pub fn max_abs_diff(&self, other: &CrossCorrelation) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Pearson correlation between `a(k)` and `b(k+τ)` for each lag, using the
/// means and variances of the overlapping windows.
///
/// Lags whose window has zero variance get the value 0.
pub fn cross_correlation(
    a: &EventSequence,
    b: &EventSequence,
    max_lag: usize,
) -> Result<CrossCorrelation, SimError> {
    let n = a.len();
    if b.len() != n {
        return Err(SimError::LengthMismatch(n, b.len()));
    }
    if (a.dt - b.dt).abs() > 1e-12 * a.dt.abs().max(1.0) {
        return Err(SimError::StepMismatch(a.dt, b.dt));
    }
    if max_lag >= n {
        return Err(SimError::LagTooLong { max_lag, len: n });
    }
    sparse_cross_correlation(&a.nonzero(), &b.nonzero(), n, max_lag, [a.link_id, b.link_id])
}

/// [`cross_correlation`] on the nonzero `(step, count)` entries of two
/// sequences of length `n`. Costs `O(entries + max_lag + coincident pairs)`.
fn sparse_cross_correlation(
    a: &[(usize, u32)],
    b: &[(usize, u32)],
    n: usize,
    max_lag: usize,
    link_ids: [u8; 2],
) -> Result<CrossCorrelation, SimError> {
    let constant = |e: &[(usize, u32)]| e.is_empty() || (e.len() == n && e.iter().all(|v| v.1 == e[0].1));
    if constant(a) {
        return Err(SimError::DegenerateVariance { link: link_ids[0] });
    }
    if constant(b) {
        return Err(SimError::DegenerateVariance { link: link_ids[1] });
    }
    if max_lag >= n {
        return Err(SimError::LagTooLong { max_lag, len: n });
    }

    // Window sums over a[0..n-τ] and b[τ..n]: totals minus the part that
    // falls outside the window at lag τ.
    let totals = |e: &[(usize, u32)]| {
        e.iter()
            .fold((0i128, 0i128), |(s, q), &(_, v)| (s + v as i128, q + (v as i128) * (v as i128)))
    };
    let cumulative = |mut d: Vec<(i128, i128)>| {
        for i in 1..d.len() {
            d[i].0 += d[i - 1].0;
            d[i].1 += d[i - 1].1;
        }
        d
    };
    let mut tail_a = vec![(0i128, 0i128); max_lag + 1];
    for &(k, v) in a.iter().rev() {
        let lag = n - k;
        if lag > max_lag {
            break;
        }
        tail_a[lag].0 += v as i128;
        tail_a[lag].1 += (v as i128) * (v as i128);
    }
    let tail_a = cumulative(tail_a);
    let mut head_b = vec![(0i128, 0i128); max_lag + 1];
    for &(k, v) in b {
        if k + 1 > max_lag {
            break;
        }
        head_b[k + 1].0 += v as i128;
        head_b[k + 1].1 += (v as i128) * (v as i128);
    }
    let head_b = cumulative(head_b);
    let (sum_a, sq_a) = totals(a);
    let (sum_b, sq_b) = totals(b);

    let mut cross = vec![0i128; max_lag + 1];
    let mut start = 0;
    for &(k, va) in a {
        while start < b.len() && b[start].0 < k {
            start += 1;
        }
        for &(j, vb) in &b[start..] {
            let lag = j - k;
            if lag > max_lag {
                break;
            }
            cross[lag] += va as i128 * vb as i128;
        }
    }

    let values = (0..=max_lag)
        .map(|lag| {
            let m = (n - lag) as i128;
            let sx = sum_a - tail_a[lag].0;
            let sxx = sq_a - tail_a[lag].1;
            let sy = sum_b - head_b[lag].0;
            let syy = sq_b - head_b[lag].1;
            let cov = m * cross[lag] - sx * sy;
            let vx = m * sxx - sx * sx;
            let vy = m * syy - sy * sy;
            if vx == 0 || vy == 0 {
                0.0
            } else {
                cov as f64 / ((vx as f64).sqrt() * (vy as f64).sqrt())
            }
        })
        .collect();
    Ok(CrossCorrelation {
        lags: (0..=max_lag).collect(),
        values,
    })
}

/// Default lag window: three region-1 traversals at the slowest candidate
/// speed, capped at a quarter of the sequence length.
pub fn default_max_lag(b1: f64, slowest_speed: f64, dt: f64, sequence_len: usize) -> usize {
    let travel = (3.0 * (b1 / slowest_speed) / dt).ceil() as usize;
    travel.min(sequence_len / 4).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct ModelKey {
    v1: u64,
    v2: u64,
    geometry: [u64; 5],
    theta_max: u64,
    persistence: u64,
    dt: u64,
    scenario: Scenario,
    steps: usize,
    max_lag: usize,
    seed: u64,
}

/// Simulation-backed model cross-correlations `R(τ; v1, v2)`, cached per
/// speed pair and motion/geometry parameters. Safe to share across threads.
#[derive(Debug)]
pub struct ModelCorrelator {
    pub steps: usize,
    pub seed: u64,
    cache: Mutex<HashMap<ModelKey, Arc<Result<CrossCorrelation, SimError>>>>,
}

impl ModelCorrelator {
    pub fn new(steps: usize, seed: u64) -> Self {
        Self {
            steps,
            seed,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn cached_len(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    fn key(&self, v1: f64, v2: f64, config: &ScenarioConfig, max_lag: usize) -> ModelKey {
        let g = &config.geometry;
        let m = &config.motion;
        ModelKey {
            v1: v1.to_bits(),
            v2: v2.to_bits(),
            geometry: [
                g.region1_width.to_bits(),
                g.region2_width.to_bits(),
                g.corridor_length.to_bits(),
                g.link_positions[0].to_bits(),
                g.link_positions[1].to_bits(),
            ],
            theta_max: m.theta_max_deg.to_bits(),
            persistence: m.heading_persistence.to_bits(),
            dt: m.time_step.to_bits(),
            scenario: m.scenario,
            steps: self.steps,
            max_lag,
            seed: self.seed,
        }
    }

    /// Model correlation for one speed pair.
    pub fn get(
        &self,
        v1: f64,
        v2: f64,
        config: &ScenarioConfig,
        max_lag: usize,
    ) -> Arc<Result<CrossCorrelation, SimError>> {
        let key = self.key(v1, v2, config, max_lag);
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Arc::clone(hit);
        }
        let seed = derive_seed(self.seed, &[v1.to_bits(), v2.to_bits()]);
        let value = Arc::new(model_cross_correlation_seeded(v1, v2, config, self.steps, max_lag, seed));
        let mut cache = self.cache.lock().expect("cache lock");
        Arc::clone(cache.entry(key).or_insert(value))
    }

    /// Fill the cache for every pair, in parallel.
    pub fn prefill(&self, pairs: &[(f64, f64)], config: &ScenarioConfig, max_lag: usize) {
        use rayon::prelude::*;
        pairs.par_iter().for_each(|&(v1, v2)| {
            self.get(v1, v2, config, max_lag);
        });
    }
}

/// Cross-correlation of the two links' event sequences for walkers moving
/// at `(v1, v2)`, simulated for `steps` steps.
///
/// Closed scenario: one walker. Open scenario: Poisson arrivals at one
/// walker per mean sojourn time; the correlation does not depend on the
/// arrival rate.
pub fn model_cross_correlation(
    v1: f64,
    v2: f64,
    config: &ScenarioConfig,
    steps: usize,
    max_lag: usize,
) -> Result<CrossCorrelation, SimError> {
    let seed = derive_seed(config.rng_seed, &[v1.to_bits(), v2.to_bits()]);
    model_cross_correlation_seeded(v1, v2, config, steps, max_lag, seed)
}

fn model_cross_correlation_seeded(
    v1: f64,
    v2: f64,
    config: &ScenarioConfig,
    steps: usize,
    max_lag: usize,
    seed: u64,
) -> Result<CrossCorrelation, SimError> {
    let mut single = config.with_speeds(v1, v2);
    single.rng_seed = seed;
    let opts = SimOptions {
        steps: Some(steps),
        ..SimOptions::default()
    };
    let mut events = [SparseEvents::default(), SparseEvents::default()];
    match single.motion.scenario {
        Scenario::Closed => {
            run_closed(&single, &opts, 1, steps, &mut events);
        }
        Scenario::Open => {
            let rate = 1.0 / time_avg(v1, v2, &single.geometry);
            run_open(&single, rate, &opts, steps, &mut events);
        }
    }
    let [a, b] = events;
    sparse_cross_correlation(&a.0, &b.0, steps, max_lag, [1, 2])
}

/// Write both links' event sequences as `t_s,link1,link2` CSV, preceded by
/// `header` (expected to be `#`-prefixed comment lines).
pub fn write_events_csv<W: Write>(mut w: W, events: &[EventSequence; 2], header: &str) -> io::Result<()> {
    w.write_all(header.as_bytes())?;
    writeln!(w, "t_s,link1,link2")?;
    let dt = events[0].dt;
    for (k, (a, b)) in events[0].samples.iter().zip(&events[1].samples).enumerate() {
        writeln!(w, "{},{a},{b}", fmt_time(k as f64 * dt))?;
    }
    Ok(())
}

/// Shortest decimal form of a timestamp, rounded to the microsecond.
pub(crate) fn fmt_time(t: f64) -> String {
    let r = (t * 1e6).round() / 1e6;
    format!("{r}")
}

/// Read an event CSV written by [`write_events_csv`]; `#` lines are skipped.
pub fn read_events_csv<R: BufRead>(r: R) -> Result<[EventSequence; 2], SimError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(r);
    let headers = reader.headers().map_err(|e| SimError::Format(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["t_s", "link1", "link2"] {
        return Err(SimError::Format(format!("unexpected header {headers:?}")));
    }
    let mut times = Vec::new();
    let (mut l1, mut l2) = (Vec::new(), Vec::new());
    for rec in reader.records() {
        let rec = rec.map_err(|e| SimError::Format(e.to_string()))?;
        let parse_u = |i: usize| -> Result<u32, SimError> {
            rec[i]
                .parse()
                .map_err(|_| SimError::Format(format!("bad count `{}`", &rec[i])))
        };
        let t: f64 = rec[0]
            .parse()
            .map_err(|_| SimError::Format(format!("bad time `{}`", &rec[0])))?;
        times.push(t);
        l1.push(parse_u(1)?);
        l2.push(parse_u(2)?);
    }
    if times.len() < 2 {
        return Err(SimError::Format("need at least two rows".into()));
    }
    let dt = times[1] - times[0];
    Ok([
        EventSequence { samples: l1, dt, link_id: 1 },
        EventSequence { samples: l2, dt, link_id: 2 },
    ])
}

pub fn write_trajectories_csv<W: Write>(mut w: W, rows: &[TrajectoryRow], header: &str) -> io::Result<()> {
    w.write_all(header.as_bytes())?;
    writeln!(w, "t_s,ped_id,x_m,y_m,theta_rad")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", fmt_time(r.t), r.ped_id, r.x, r.y, r.theta)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn outdoor() -> ScenarioConfig {
        ScenarioConfig::preset("outdoor").unwrap()
    }

    /// Direct O(n·lags) Pearson correlation over overlapping windows.
    fn naive_xcorr(a: &[u32], b: &[u32], max_lag: usize) -> Vec<f64> {
        let n = a.len();
        (0..=max_lag)
            .map(|lag| {
                let x: Vec<f64> = a[..n - lag].iter().map(|&v| v as f64).collect();
                let y: Vec<f64> = b[lag..].iter().map(|&v| v as f64).collect();
                let m = x.len() as f64;
                let mx = x.iter().sum::<f64>() / m;
                let my = y.iter().sum::<f64>() / m;
                let cov: f64 = x.iter().zip(&y).map(|(p, q)| (p - mx) * (q - my)).sum();
                let vx: f64 = x.iter().map(|p| (p - mx).powi(2)).sum();
                let vy: f64 = y.iter().map(|q| (q - my).powi(2)).sum();
                if vx == 0.0 || vy == 0.0 {
                    0.0
                } else {
                    cov / (vx * vy).sqrt()
                }
            })
            .collect()
    }

    fn seq(samples: Vec<u32>, link_id: u8) -> EventSequence {
        EventSequence { samples, dt: 0.05, link_id }
    }

    #[test]
    fn persistent_step_moves_straight() {
        let c = outdoor();
        let mut motion = c.motion;
        motion.heading_persistence = 1.0;
        let s = PedestrianState { x: 1.0, y: 1.0, heading: 0.0, direction_sign: 1 };
        let mut rng = stream_rng(1, 0);
        let next = step(&s, &motion, &c.geometry, &mut rng);
        assert!((next.x - 1.04).abs() < 1e-12);
        assert_eq!(next.heading, 0.0);
        assert_eq!(next.y, 1.0);
    }

    #[test]
    fn speed_is_chosen_by_current_region() {
        let c = outdoor();
        let mut motion = c.motion;
        motion.heading_persistence = 1.0;
        // Starts 1 mm inside region 1, ends well inside region 2.
        let s = PedestrianState { x: 5.499, y: 1.0, heading: 0.0, direction_sign: 1 };
        let mut rng = stream_rng(1, 0);
        let next = step(&s, &motion, &c.geometry, &mut rng);
        assert!((next.x - (5.499 + 0.8 * 0.05)).abs() < 1e-12);
        let next2 = step(&next, &motion, &c.geometry, &mut rng);
        assert!((next2.x - next.x - 0.3 * 0.05).abs() < 1e-12);
    }

    #[test]
    fn side_wall_reflection_is_specular() {
        let c = outdoor();
        let mut motion = c.motion;
        motion.heading_persistence = 1.0;
        let length = c.geometry.corridor_length;
        let eps = 0.001;
        let th = std::f64::consts::FRAC_PI_4;
        let s = PedestrianState { x: 1.0, y: length - eps, heading: th, direction_sign: 1 };
        let mut rng = stream_rng(1, 0);
        let next = step(&s, &motion, &c.geometry, &mut rng);
        assert!((next.heading + th).abs() < 1e-12);
        let raw_y = length - eps + 0.04 * th.sin();
        assert!((next.y - (2.0 * length - raw_y)).abs() < 1e-12);
        assert!(next.y <= length);
    }

    #[test]
    fn end_wall_reflection_closed_and_exit_open() {
        let c = outdoor();
        let mut motion = c.motion;
        motion.heading_persistence = 1.0;
        let b = c.geometry.total_width();
        let s = PedestrianState { x: b - 0.001, y: 1.0, heading: 0.0, direction_sign: 1 };
        let mut rng = stream_rng(1, 0);
        let next = step(&s, &motion, &c.geometry, &mut rng);
        assert!(next.x <= b && next.is_inside(&c.geometry));
        assert!((next.heading.abs() - PI).abs() < 1e-12);

        motion.scenario = Scenario::Open;
        let next = step(&s, &motion, &c.geometry, &mut rng);
        assert!(!next.is_inside(&c.geometry));
    }

    proptest! {
        #[test]
        fn step_keeps_state_valid(
            x in 0.0f64..14.3, y in 0.0f64..4.26, u in -1.0f64..1.0,
            back in any::<bool>(), seed in any::<u64>(), v1 in 0.1f64..2.5, v2 in 0.1f64..2.5,
        ) {
            let c = outdoor().with_speeds(v1, v2);
            let tm = c.motion.theta_max();
            let heading = wrap_angle(u * tm + if back { PI } else { 0.0 });
            let mut s = PedestrianState { x, y, heading, direction_sign: 1 };
            let mut rng = stream_rng(seed, 0);
            for _ in 0..200 {
                s = step(&s, &c.motion, &c.geometry, &mut rng);
                prop_assert!(s.x >= 0.0 && s.x <= c.geometry.total_width());
                prop_assert!(s.y >= 0.0 && s.y <= c.geometry.corridor_length);
                prop_assert!(heading_allowed(s.heading, tm, &c.motion, 1));
            }
        }

        #[test]
        fn sparse_xcorr_matches_naive(
            a in proptest::collection::vec(prop_oneof![8 => Just(0u32), 2 => 1u32..3], 40..120),
            b_seed in proptest::collection::vec(prop_oneof![8 => Just(0u32), 2 => 1u32..3], 120),
            max_lag in 0usize..30,
        ) {
            let n = a.len();
            let b = b_seed[..n].to_vec();
            prop_assume!(max_lag < n);
            let (sa, sb) = (seq(a.clone(), 1), seq(b.clone(), 2));
            match cross_correlation(&sa, &sb, max_lag) {
                Ok(r) => {
                    let naive = naive_xcorr(&a, &b, max_lag);
                    for (x, y) in r.values.iter().zip(&naive) {
                        prop_assert!((x - y).abs() < 1e-9, "{} vs {}", x, y);
                        prop_assert!(x.abs() <= 1.0 + 1e-12);
                    }
                }
                Err(SimError::DegenerateVariance { .. }) => {
                    prop_assert!(a.iter().all(|v| *v == a[0]) || b.iter().all(|v| *v == b[0]));
                }
                Err(e) => prop_assert!(false, "unexpected {}", e),
            }
        }
    }

    #[test]
    fn crossing_rule_edge_cases() {
        assert!(crosses(1.0, 3.0, 2.0));
        assert!(crosses(3.0, 1.0, 2.0));
        assert!(crosses(1.0, 2.0, 2.0));
        assert!(!crosses(2.0, 3.0, 2.0));
        assert!(!crosses(2.0, 2.0, 2.0));
        assert!(!crosses(1.0, 1.5, 2.0));
    }

    #[test]
    fn self_correlation_is_one_at_zero_lag() {
        let s = seq(vec![0, 1, 0, 0, 2, 0, 1, 0, 0, 0], 1);
        let r = cross_correlation(&s, &s, 3).unwrap();
        assert!((r.values[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_sequence_is_degenerate() {
        let a = seq(vec![0; 20], 1);
        let b = seq([0, 1].repeat(10), 2);
        assert_eq!(cross_correlation(&a, &b, 2), Err(SimError::DegenerateVariance { link: 1 }));
        assert_eq!(cross_correlation(&b, &a, 2), Err(SimError::DegenerateVariance { link: 1 }));
        assert!(matches!(cross_correlation(&b, &b, 20), Err(SimError::LagTooLong { .. })));
    }

    #[test]
    fn independent_sequences_near_zero() {
        let n = 40_000;
        let mut rng = stream_rng(99, 0);
        let a: Vec<u32> = (0..n).map(|_| rng.gen_bool(0.1) as u32).collect();
        let b: Vec<u32> = (0..n).map(|_| rng.gen_bool(0.1) as u32).collect();
        let r = cross_correlation(&seq(a, 1), &seq(b, 2), 50).unwrap();
        let bound = 3.0 / (n as f64).sqrt();
        let outside = r.values.iter().filter(|v| v.abs() > bound).count();
        // A 3-sigma band leaves roughly 0.3% of lags outside.
        assert!(outside <= 2, "{outside} lags outside ±{bound}");
    }

    #[test]
    fn deterministic_shuttle_peak_lag() {
        // A walker at 1 m/s shuttling between x = 0 and x = 6 with the links
        // at 2.5 and 3.7: link 2 follows link 1 by 1.2 m / (v·dt) = 24 steps.
        let c = outdoor();
        let mut motion = c.motion.with_speeds(1.0, 1.0);
        motion.heading_persistence = 1.0;
        let geom = AreaGeometry { region2_width: 0.5, ..c.geometry };
        let geom = AreaGeometry { region1_width: 5.5, ..geom };
        let steps = 20_000;
        let mut s = PedestrianState { x: 0.3, y: 1.0, heading: 0.0, direction_sign: 1 };
        let mut rng = stream_rng(1, 0);
        let mut ev = [EventSequence::zeros(steps, 0.05, 1), EventSequence::zeros(steps, 0.05, 2)];
        for k in 0..steps {
            let next = step(&s, &motion, &geom, &mut rng);
            record_crossings(s.x, next.x, geom.link_positions, k, &mut ev);
            s = next;
        }
        let r = cross_correlation(&ev[0], &ev[1], 100).unwrap();
        assert_eq!(r.peak_lag(), 24);
    }

    #[test]
    fn closed_run_is_reproducible_and_conserves_population() {
        let mut c = outdoor();
        c.duration = 60.0;
        let opts = SimOptions { burn_in_steps: 100, ..SimOptions::default() };
        let a = simulate_closed(&c, &opts).unwrap();
        let b = simulate_closed(&c, &opts).unwrap();
        assert_eq!(a.events, b.events);
        assert_eq!(a.final_population, 5);
        for seq in &a.events {
            assert!(seq.samples.iter().all(|&v| v <= 5));
        }
        c.rng_seed += 1;
        let d = simulate_closed(&c, &opts).unwrap();
        assert_ne!(a.events, d.events);
    }

    #[test]
    fn first_walker_independent_of_head_count() {
        let mut c = outdoor();
        c.duration = 30.0;
        let opts = SimOptions { burn_in_steps: 0, trajectory_stride: Some(1), steps: None };
        c.population = Population::Fixed(1);
        let one = simulate_closed(&c, &opts).unwrap();
        c.population = Population::Fixed(4);
        let four = simulate_closed(&c, &opts).unwrap();
        let first: Vec<_> = four.trajectories.iter().filter(|r| r.ped_id == 0).collect();
        assert_eq!(first.len(), one.trajectories.len());
        for (a, b) in first.iter().zip(&one.trajectories) {
            assert_eq!(**a, *b);
        }
    }

    #[test]
    fn open_zero_rate_is_empty() {
        let mut c = ScenarioConfig::preset("costco-aisle").unwrap();
        c.motion.arrival_rate_per_min = Some(1e-12);
        let out = simulate_open(&c, &SimOptions::default()).unwrap();
        assert_eq!(out.arrivals, 0);
        assert!(out.events.iter().all(|s| s.event_count() == 0));
    }

    #[test]
    fn open_flow_balance() {
        let mut c = ScenarioConfig::preset("costco-aisle").unwrap();
        c.motion.arrival_rate_per_min = Some(6.0);
        c.duration = 3_600.0;
        let out = simulate_open(&c, &SimOptions::default()).unwrap();
        assert!(out.arrivals > 300);
        assert_eq!(out.arrivals - out.departures, out.final_population);
        // Every forward walker crosses each link exactly once.
        let inflight = out.final_population;
        for seq in &out.events {
            let total: u32 = seq.samples.iter().sum();
            assert!((total as usize) <= out.arrivals);
            assert!(total as usize + inflight >= out.arrivals);
        }
    }

    #[test]
    fn scenario_mismatch_rejected() {
        let c = ScenarioConfig::preset("costco-aisle").unwrap();
        assert!(simulate_closed(&c, &SimOptions::default()).is_err());
        assert!(simulate_open(&outdoor(), &SimOptions::default()).is_err());
    }

    #[test]
    fn model_cache_hits() {
        let c = outdoor();
        let m = ModelCorrelator::new(20_000, 5);
        let a = m.get(0.8, 0.3, &c, 200);
        let b = m.get(0.8, 0.3, &c, 200);
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(m.cached_len(), 1);
        m.prefill(&[(0.8, 0.3), (1.6, 0.3)], &c, 200);
        assert_eq!(m.cached_len(), 2);
    }

    #[test]
    fn events_csv_round_trip() {
        let ev = [seq(vec![0, 1, 0, 2, 0], 1), seq(vec![1, 0, 0, 0, 1], 2)];
        let mut buf = Vec::new();
        write_events_csv(&mut buf, &ev, "# seed = 3\n").unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# seed = 3\nt_s,link1,link2\n0,0,1\n0.05,1,0\n"));
        let back = read_events_csv(&buf[..]).unwrap();
        assert_eq!(back[0].samples, ev[0].samples);
        assert_eq!(back[1].samples, ev[1].samples);
        assert!((back[0].dt - 0.05).abs() < 1e-12);
    }

    #[test]
    fn seeds_are_distinct_per_word() {
        assert_ne!(derive_seed(1, &[2]), derive_seed(1, &[3]));
        assert_ne!(derive_seed(1, &[2, 3]), derive_seed(1, &[3, 2]));
        assert_eq!(derive_seed(7, &[1, 2]), derive_seed(7, &[1, 2]));
    }

    #[test]
    fn default_lag_window() {
        assert_eq!(default_max_lag(5.5, 0.1, 0.05, 1_000_000), 3_300);
        assert_eq!(default_max_lag(5.5, 0.1, 0.05, 12_000), 3_000);
    }
}
