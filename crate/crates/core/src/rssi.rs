//! From raw two-link RSSI traces to crossing-event sequences.
//!
//! A pedestrian on the line of sight between a transmitter and receiver
//! produces a dip in the received signal strength. Dips are detected
//! relative to each link's unblocked baseline and quantized to the number of
//! simultaneous blockers by matching the dip floor against calibrated levels.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;

use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::simulator::{cross_correlation, fmt_time, stream_rng, CrossCorrelation, EventSequence, SimError};

pub const DEFAULT_DIP_THRESHOLD_DB: f64 = 6.0;
pub const DEFAULT_DIP_EXIT_DB: f64 = 3.0;
/// Levels used by [`CalibrationTable::synthetic`], relative to the baseline.
pub const SYNTHETIC_LEVEL1_DROP_DB: f64 = 15.0;
pub const SYNTHETIC_LEVEL2_DROP_DB: f64 = 25.0;

#[derive(Debug, Error)]
pub enum RssiError {
    #[error("no baseline calibrated for link {link}")]
    NoBaseline { link: u8 },
    #[error("link must be 1 or 2, got {0}")]
    BadLink(u8),
    #[error("timestamps must be strictly increasing (row {row})")]
    NonMonotonicTime { row: usize },
    #[error("malformed RSSI log: {0}")]
    Format(String),
    #[error("invalid calibration: {0}")]
    Calibration(String),
    #[error("trace is empty")]
    Empty,
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

fn link_index(link: u8) -> Result<usize, RssiError> {
    match link {
        1 | 2 => Ok(link as usize - 1),
        _ => Err(RssiError::BadLink(link)),
    }
}

/// Signal strength of both links on a shared clock. `None` marks a missing
/// sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RssiTrace {
    pub times: Vec<f64>,
    pub rssi: [Vec<Option<f64>>; 2],
}

impl RssiTrace {
    pub fn new(times: Vec<f64>, rssi: [Vec<Option<f64>>; 2]) -> Result<Self, RssiError> {
        if rssi[0].len() != times.len() || rssi[1].len() != times.len() {
            return Err(RssiError::Format("column lengths differ".into()));
        }
        if let Some(row) = times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(RssiError::NonMonotonicTime { row: row + 1 });
        }
        Ok(Self { times, rssi })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Mean sampling rate (Hz).
    pub fn sample_rate(&self) -> Option<f64> {
        let n = self.times.len();
        (n >= 2).then(|| (n - 1) as f64 / (self.times[n - 1] - self.times[0]))
    }

    /// Add `offset_db` to every sample.
    pub fn shifted(&self, offset_db: f64) -> Self {
        let shift = |col: &Vec<Option<f64>>| col.iter().map(|v| v.map(|x| x + offset_db)).collect();
        Self {
            times: self.times.clone(),
            rssi: [shift(&self.rssi[0]), shift(&self.rssi[1])],
        }
    }

    /// Parse `t_s,rssi1_db,rssi2_db` CSV; empty fields are missing samples.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, RssiError> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(r);
        let headers = reader.headers().map_err(|e| RssiError::Format(e.to_string()))?;
        if headers.iter().collect::<Vec<_>>() != ["t_s", "rssi1_db", "rssi2_db"] {
            return Err(RssiError::Format(format!("unexpected header {headers:?}")));
        }
        let mut times = Vec::new();
        let mut cols: [Vec<Option<f64>>; 2] = [Vec::new(), Vec::new()];
        for (row, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| RssiError::Format(e.to_string()))?;
            let t = rec[0]
                .parse::<f64>()
                .map_err(|_| RssiError::Format(format!("row {}: bad time `{}`", row + 1, &rec[0])))?;
            times.push(t);
            for (i, col) in cols.iter_mut().enumerate() {
                let field = &rec[i + 1];
                let value = if field.is_empty() {
                    None
                } else {
                    Some(field.parse::<f64>().map_err(|_| {
                        RssiError::Format(format!("row {}: bad RSSI `{field}`", row + 1))
                    })?)
                };
                col.push(value);
            }
        }
        if times.is_empty() {
            return Err(RssiError::Empty);
        }
        Self::new(times, cols)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RssiError> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|source| RssiError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::read_csv(io::BufReader::new(file))
    }

    pub fn write_csv<W: Write>(&self, mut w: W, header: &str) -> io::Result<()> {
        w.write_all(header.as_bytes())?;
        writeln!(w, "t_s,rssi1_db,rssi2_db")?;
        let cell = |v: Option<f64>| v.map(|x| format!("{}", (x * 1e4).round() / 1e4)).unwrap_or_default();
        for (k, t) in self.times.iter().enumerate() {
            writeln!(w, "{},{},{}", fmt_time(*t), cell(self.rssi[0][k]), cell(self.rssi[1][k]))?;
        }
        Ok(())
    }
}

/// Per-link unblocked baseline and dip floors for one and two blockers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationTable {
    pub baseline: [Option<f64>; 2],
    /// `levels[link][l - 1]` is the floor (dB) with `l` blockers.
    pub levels: [[f64; 2]; 2],
}

const CALIBRATION_KEYS: [&str; 6] = [
    "baseline1_db",
    "baseline2_db",
    "r_1_1_db",
    "r_2_1_db",
    "r_1_2_db",
    "r_2_2_db",
];

impl CalibrationTable {
    /// Fixed drops below `baseline_db` on both links.
    pub fn synthetic(baseline_db: f64) -> Self {
        let one = baseline_db - SYNTHETIC_LEVEL1_DROP_DB;
        let two = baseline_db - SYNTHETIC_LEVEL2_DROP_DB;
        Self {
            baseline: [Some(baseline_db); 2],
            levels: [[one, two]; 2],
        }
    }

    pub fn baseline(&self, link: u8) -> Result<f64, RssiError> {
        self.baseline[link_index(link)?].ok_or(RssiError::NoBaseline { link })
    }

    /// Check `R2 < R1 < baseline` on each link.
    pub fn validate(&self) -> Result<(), RssiError> {
        for i in 0..2 {
            let [r1, r2] = self.levels[i];
            if !(r2 < r1) {
                return Err(RssiError::Calibration(format!(
                    "link {}: two-blocker level {r2} dB must lie below one-blocker level {r1} dB",
                    i + 1
                )));
            }
            if let Some(b) = self.baseline[i] {
                if !(r1 < b) {
                    return Err(RssiError::Calibration(format!(
                        "link {}: one-blocker level {r1} dB must lie below baseline {b} dB",
                        i + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Number of blockers whose level is closest to `rssi_db`; ties go to 1.
    pub fn quantize(&self, link: u8, rssi_db: f64) -> Result<u32, RssiError> {
        let [r1, r2] = self.levels[link_index(link)?];
        Ok(if (rssi_db - r2).abs() < (rssi_db - r1).abs() { 2 } else { 1 })
    }

    pub fn shifted(&self, offset_db: f64) -> Self {
        Self {
            baseline: self.baseline.map(|b| b.map(|x| x + offset_db)),
            levels: self.levels.map(|l| l.map(|x| x + offset_db)),
        }
    }

    /// Parse `key = value` lines; baselines are optional, levels are not.
    pub fn parse(text: &str) -> Result<Self, RssiError> {
        let mut values = [None; 6];
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| RssiError::Calibration(format!("line {}: expected `key = value`", idx + 1)))?;
            let key = key.trim();
            let slot = CALIBRATION_KEYS
                .iter()
                .position(|k| *k == key)
                .ok_or_else(|| RssiError::Calibration(format!("line {}: unknown key `{key}`", idx + 1)))?;
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| RssiError::Calibration(format!("line {}: `{key}` is not a number", idx + 1)))?;
            values[slot] = Some(v);
        }
        let level = |slot: usize| {
            values[slot].ok_or_else(|| RssiError::Calibration(format!("missing `{}`", CALIBRATION_KEYS[slot])))
        };
        let table = Self {
            baseline: [values[0], values[1]],
            levels: [[level(2)?, level(3)?], [level(4)?, level(5)?]],
        };
        table.validate()?;
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RssiError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| RssiError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, b) in self.baseline.iter().enumerate() {
            if let Some(b) = b {
                out.push_str(&format!("{} = {b}\n", CALIBRATION_KEYS[i]));
            }
        }
        let flat = [self.levels[0][0], self.levels[0][1], self.levels[1][0], self.levels[1][1]];
        for (key, v) in CALIBRATION_KEYS[2..].iter().zip(flat) {
            out.push_str(&format!("{key} = {v}\n"));
        }
        out
    }
}

/// Median of a link's samples over `[t_start, t_end]`, for use as the
/// unblocked baseline.
pub fn estimate_baseline(trace: &RssiTrace, link: u8, t_start: f64, t_end: f64) -> Result<f64, RssiError> {
    let col = &trace.rssi[link_index(link)?];
    let mut vals: Vec<f64> = trace
        .times
        .iter()
        .zip(col)
        .filter(|(t, _)| (t_start..=t_end).contains(*t))
        .filter_map(|(_, v)| *v)
        .collect();
    if vals.is_empty() {
        return Err(RssiError::Empty);
    }
    vals.sort_by(f64::total_cmp);
    let n = vals.len();
    Ok(if n % 2 == 1 {
        vals[n / 2]
    } else {
        0.5 * (vals[n / 2 - 1] + vals[n / 2])
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DipParams {
    /// A dip starts when RSSI falls this far below baseline (dB).
    pub threshold_db: f64,
    /// A dip ends when RSSI recovers to within this distance of baseline.
    pub exit_db: f64,
}

impl Default for DipParams {
    fn default() -> Self {
        Self {
            threshold_db: DEFAULT_DIP_THRESHOLD_DB,
            exit_db: DEFAULT_DIP_EXIT_DB,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dip {
    /// Time of the first minimum sample (s).
    pub time: f64,
    /// RSSI at the minimum (dB).
    pub floor_db: f64,
    /// Baseline minus floor (dB).
    pub depth_db: f64,
}

/// One detection per excursion below `baseline - threshold`, ended by a
/// recovery above `baseline - exit`. Missing samples are skipped.
pub fn detect_dips(
    trace: &RssiTrace,
    link: u8,
    calib: &CalibrationTable,
    params: &DipParams,
) -> Result<Vec<Dip>, RssiError> {
    let baseline = calib.baseline(link)?;
    let col = &trace.rssi[link_index(link)?];
    let enter = baseline - params.threshold_db;
    let exit = baseline - params.exit_db.min(params.threshold_db);
    let mut dips = Vec::new();
    let mut current: Option<(f64, f64)> = None;
    for (t, v) in trace.times.iter().zip(col) {
        let Some(v) = *v else { continue };
        match current {
            None if v <= enter => current = Some((*t, v)),
            None => {}
            Some((_, floor)) if v >= exit => {
                let (time, _) = current.take().expect("open dip");
                dips.push(Dip {
                    time,
                    floor_db: floor,
                    depth_db: baseline - floor,
                });
            }
            Some((_, floor)) if v < floor => current = Some((*t, v)),
            Some(_) => {}
        }
    }
    if let Some((time, floor)) = current {
        dips.push(Dip {
            time,
            floor_db: floor,
            depth_db: baseline - floor,
        });
    }
    Ok(dips)
}

/// Place each dip on the nearest step of a `dt` grid spanning `duration`
/// and quantize its floor to a blocker count. Two dips on one step keep the
/// larger count.
pub fn to_event_sequence(
    dips: &[Dip],
    calib: &CalibrationTable,
    link: u8,
    dt: f64,
    duration: f64,
) -> Result<EventSequence, RssiError> {
    let n = (duration / dt).round() as usize;
    let mut seq = EventSequence::zeros(n, dt, link);
    for dip in dips {
        let k = (dip.time / dt).round();
        if k < 0.0 || k as usize >= n {
            continue;
        }
        let l = calib.quantize(link, dip.floor_db)?;
        let slot = &mut seq.samples[k as usize];
        *slot = (*slot).max(l);
    }
    Ok(seq)
}

/// Fraction of time steps carrying at least one event.
pub fn experimental_p_cross(seq: &EventSequence) -> f64 {
    let duration = seq.duration();
    if duration <= 0.0 {
        return 0.0;
    }
    seq.event_count() as f64 * seq.dt / duration
}

#[derive(Debug, Clone)]
pub struct ExperimentalStats {
    pub p_exp_link1: f64,
    pub p_exp_link2: f64,
    pub p_exp_mean: f64,
    pub xcorr: Result<CrossCorrelation, SimError>,
    pub events: [EventSequence; 2],
}

impl ExperimentalStats {
    /// Statistics of a pair of event sequences, correlated up to `max_lag`.
    pub fn from_events(events: [EventSequence; 2], max_lag: usize) -> Self {
        let p1 = experimental_p_cross(&events[0]);
        let p2 = experimental_p_cross(&events[1]);
        let xcorr = cross_correlation(&events[0], &events[1], max_lag);
        Self {
            p_exp_link1: p1,
            p_exp_link2: p2,
            p_exp_mean: 0.5 * (p1 + p2),
            xcorr,
            events,
        }
    }

    pub fn dt(&self) -> f64 {
        self.events[0].dt
    }

    pub fn len(&self) -> usize {
        self.events[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.events[0].is_empty()
    }

    /// Statistics restricted to the first `steps` steps.
    pub fn truncated(&self, steps: usize, max_lag: usize) -> Self {
        Self::from_events(
            [self.events[0].truncated(steps), self.events[1].truncated(steps)],
            max_lag,
        )
    }
}

/// Extract both links' events from `trace` and summarise them. The grid
/// spans from 0 to the last timestamp.
pub fn experiment_stats(
    trace: &RssiTrace,
    calib: &CalibrationTable,
    dt: f64,
    params: &DipParams,
    max_lag: usize,
) -> Result<ExperimentalStats, RssiError> {
    let events = trace_events(trace, calib, dt, params)?;
    Ok(ExperimentalStats::from_events(events, max_lag))
}

/// Both links' event sequences on a `dt` grid covering the trace.
pub fn trace_events(
    trace: &RssiTrace,
    calib: &CalibrationTable,
    dt: f64,
    params: &DipParams,
) -> Result<[EventSequence; 2], RssiError> {
    let last = *trace.times.last().ok_or(RssiError::Empty)?;
    let duration = ((last / dt).floor() + 1.0) * dt;
    let mut out = Vec::with_capacity(2);
    for link in [1u8, 2] {
        let dips = detect_dips(trace, link, calib, params)?;
        out.push(to_event_sequence(&dips, calib, link, dt, duration)?);
    }
    let second = out.pop().expect("two links");
    let first = out.pop().expect("two links");
    Ok([first, second])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    /// RSSI samples per event-sequence step.
    pub oversample: usize,
    /// Standard deviation of additive Gaussian noise (dB).
    pub noise_sigma_db: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            oversample: 4,
            noise_sigma_db: 0.0,
            seed: 0,
        }
    }
}

/// Synthetic RSSI for a pair of event sequences.
///
/// Each event at step `k` becomes a rectangular dip to the calibrated level
/// covering the samples within half a step of `k·dt`, exclusive of the
/// half-step points, which stay at baseline so that events on consecutive
/// steps remain separable. Counts above two use the two-blocker level.
pub fn synthesize_rssi(
    events: &[EventSequence; 2],
    calib: &CalibrationTable,
    params: &SynthParams,
) -> Result<RssiTrace, RssiError> {
    let m = params.oversample.max(2);
    let dt = events[0].dt;
    let n_samples = events[0].len() * m;
    let times: Vec<f64> = (0..n_samples).map(|j| j as f64 * dt / m as f64).collect();
    let half = m / 2;
    let noise = (params.noise_sigma_db > 0.0)
        .then(|| Normal::new(0.0, params.noise_sigma_db).expect("finite sigma"));

    let mut cols: [Vec<Option<f64>>; 2] = [Vec::new(), Vec::new()];
    for (i, seq) in events.iter().enumerate() {
        let link = i as u8 + 1;
        let baseline = calib.baseline(link)?;
        let mut col = vec![baseline; n_samples];
        for (k, &count) in seq.samples.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let level = calib.levels[i][(count.min(2) - 1) as usize];
            let centre = k * m;
            let lo = centre.saturating_sub(half - 1);
            let hi = (centre + half - 1).min(n_samples - 1);
            col[lo..=hi].iter_mut().for_each(|v| *v = level);
        }
        if let Some(noise) = &noise {
            let mut rng = stream_rng(params.seed, i as u64);
            col.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
        }
        cols[i] = col.into_iter().map(Some).collect();
    }
    RssiTrace::new(times, cols)
}

/// Event-level agreement between recovered and reference sequences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryScore {
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
}

impl RecoveryScore {
    pub fn precision(&self) -> f64 {
        let d = self.true_positive + self.false_positive;
        if d == 0 { 1.0 } else { self.true_positive as f64 / d as f64 }
    }

    pub fn recall(&self) -> f64 {
        let d = self.true_positive + self.false_negative;
        if d == 0 { 1.0 } else { self.true_positive as f64 / d as f64 }
    }
}

/// Step-exact comparison of event presence (counts ignored).
pub fn score_recovery(recovered: &EventSequence, reference: &EventSequence) -> RecoveryScore {
    let mut score = RecoveryScore {
        true_positive: 0,
        false_positive: 0,
        false_negative: 0,
    };
    let n = recovered.len().max(reference.len());
    for k in 0..n {
        let r = recovered.samples.get(k).copied().unwrap_or(0) > 0;
        let t = reference.samples.get(k).copied().unwrap_or(0) > 0;
        match (r, t) {
            (true, true) => score.true_positive += 1,
            (true, false) => score.false_positive += 1,
            (false, true) => score.false_negative += 1,
            (false, false) => {}
        }
    }
    score
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn calib() -> CalibrationTable {
        CalibrationTable::synthetic(-40.0)
    }

    fn trace_from(values: &[f64], rate: f64) -> RssiTrace {
        let times = (0..values.len()).map(|i| i as f64 / rate).collect();
        let col: Vec<Option<f64>> = values.iter().copied().map(Some).collect();
        RssiTrace::new(times, [col.clone(), col]).unwrap()
    }

    #[test]
    fn flat_trace_has_no_dips() {
        let t = trace_from(&[-40.0; 100], 20.0);
        assert!(detect_dips(&t, 1, &calib(), &DipParams::default()).unwrap().is_empty());
    }

    #[test]
    fn one_excursion_one_dip_at_minimum() {
        // Two seconds at -55 dB with a slightly deeper sample in the middle.
        let mut v = vec![-40.0; 200];
        for s in v.iter_mut().skip(60).take(40) {
            *s = -55.0;
        }
        v[75] = -56.0;
        let t = trace_from(&v, 20.0);
        let dips = detect_dips(&t, 1, &calib(), &DipParams::default()).unwrap();
        assert_eq!(dips.len(), 1);
        assert!((dips[0].time - 75.0 / 20.0).abs() < 1e-12);
        assert_eq!(dips[0].floor_db, -56.0);
    }

    #[test]
    fn separated_excursions_give_two_dips() {
        let mut v = vec![-40.0; 200];
        v[50..60].iter_mut().for_each(|s| *s = -55.0);
        v[100..110].iter_mut().for_each(|s| *s = -65.0);
        let dips = detect_dips(&trace_from(&v, 20.0), 2, &calib(), &DipParams::default()).unwrap();
        assert_eq!(dips.len(), 2);
    }

    #[test]
    fn hysteresis_suppresses_chatter() {
        // Bouncing between -47 and -45 stays below the exit level.
        let mut v = vec![-40.0; 100];
        for (i, s) in v[20..60].iter_mut().enumerate() {
            *s = if i % 2 == 0 { -47.0 } else { -45.0 };
        }
        let dips = detect_dips(&trace_from(&v, 20.0), 1, &calib(), &DipParams::default()).unwrap();
        assert_eq!(dips.len(), 1);
    }

    #[test]
    fn missing_baseline_is_an_error() {
        let mut c = calib();
        c.baseline[1] = None;
        let t = trace_from(&[-40.0; 10], 20.0);
        assert!(matches!(
            detect_dips(&t, 2, &c, &DipParams::default()),
            Err(RssiError::NoBaseline { link: 2 })
        ));
    }

    #[test]
    fn quantization_ties_go_to_one_blocker() {
        let c = calib();
        assert_eq!(c.quantize(1, -60.0).unwrap(), 1);
        assert_eq!(c.quantize(1, -61.0).unwrap(), 2);
        assert_eq!(c.quantize(1, -54.0).unwrap(), 1);
        let dips = [Dip { time: 1.0, floor_db: -64.0, depth_db: 24.0 }];
        let seq = to_event_sequence(&dips, &c, 1, 0.05, 2.0).unwrap();
        assert_eq!(seq.samples[20], 2);
        let empty = to_event_sequence(&[], &c, 1, 0.05, 2.0).unwrap();
        assert!(empty.samples.iter().all(|v| *v == 0));
    }

    #[test]
    fn experimental_probability_arithmetic() {
        let mut s = EventSequence::zeros(12_000, 0.05, 1);
        assert_eq!(experimental_p_cross(&s), 0.0);
        for k in 0..30 {
            s.samples[k * 100] = 1;
        }
        assert!((experimental_p_cross(&s) - 2.5e-3).abs() < 1e-15);
        s.samples.iter_mut().for_each(|v| *v = 1);
        assert!((experimental_p_cross(&s) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_missing_fields_and_ordering() {
        let text = "t_s,rssi1_db,rssi2_db\n0,-40,-41\n0.05,,-41.5\n0.1,-55,\n";
        let t = RssiTrace::read_csv(text.as_bytes()).unwrap();
        assert_eq!(t.rssi[0], vec![Some(-40.0), None, Some(-55.0)]);
        assert_eq!(t.rssi[1][2], None);
        let bad = "t_s,rssi1_db,rssi2_db\n0,-40,-41\n0,-40,-41\n";
        assert!(matches!(
            RssiTrace::read_csv(bad.as_bytes()),
            Err(RssiError::NonMonotonicTime { row: 1 })
        ));
    }

    #[test]
    fn calibration_text_round_trip_and_ordering() {
        let c = CalibrationTable {
            baseline: [Some(-40.0), Some(-42.5)],
            levels: [[-55.0, -65.0], [-57.0, -66.0]],
        };
        assert_eq!(CalibrationTable::parse(&c.to_text()).unwrap(), c);
        let bad = "r_1_1_db = -65\nr_2_1_db = -55\nr_1_2_db = -55\nr_2_2_db = -65\n";
        assert!(CalibrationTable::parse(bad).is_err());
        let no_base = "r_1_1_db = -55\nr_2_1_db = -65\nr_1_2_db = -55\nr_2_2_db = -65\n";
        assert_eq!(CalibrationTable::parse(no_base).unwrap().baseline, [None, None]);
    }

    #[test]
    fn median_baseline_ignores_spikes() {
        let mut v = vec![-40.0; 21];
        v[3] = -10.0;
        v[7] = -80.0;
        let t = trace_from(&v, 20.0);
        assert_eq!(estimate_baseline(&t, 1, 0.0, 1.0).unwrap(), -40.0);
    }

    fn random_events(seed: u64, n: usize, rate: f64) -> [EventSequence; 2] {
        use rand::Rng;
        let mut rng = stream_rng(seed, 9);
        let mut make = |link| {
            let mut s = EventSequence::zeros(n, 0.05, link);
            for v in s.samples.iter_mut() {
                if rng.gen_bool(rate) {
                    *v = if rng.gen_bool(0.1) { 2 } else { 1 };
                }
            }
            s
        };
        [make(1), make(2)]
    }

    #[test]
    fn zero_noise_round_trip_is_identity() {
        let events = random_events(3, 5_000, 0.05);
        let trace = synthesize_rssi(&events, &calib(), &SynthParams::default()).unwrap();
        let back = trace_events(&trace, &calib(), 0.05, &DipParams::default()).unwrap();
        assert_eq!(back, events);
    }

    #[test]
    fn noisy_round_trip_recovers_events() {
        let events = random_events(4, 20_000, 0.01);
        let params = SynthParams { noise_sigma_db: 1.0, seed: 11, ..SynthParams::default() };
        let trace = synthesize_rssi(&events, &calib(), &params).unwrap();
        let back = trace_events(&trace, &calib(), 0.05, &DipParams::default()).unwrap();
        for (b, e) in back.iter().zip(&events) {
            let s = score_recovery(b, e);
            assert!(s.precision() >= 0.99 && s.recall() >= 0.99, "{s:?}");
        }
    }

    #[test]
    fn quiet_link_still_reports_probability() {
        let mut events = random_events(5, 2_000, 0.02);
        events[1].samples.iter_mut().for_each(|v| *v = 0);
        let trace = synthesize_rssi(&events, &calib(), &SynthParams::default()).unwrap();
        let stats = experiment_stats(&trace, &calib(), 0.05, &DipParams::default(), 100).unwrap();
        assert!(stats.p_exp_link1 > 0.0);
        assert_eq!(stats.p_exp_link2, 0.0);
        assert!(matches!(stats.xcorr, Err(SimError::DegenerateVariance { link: 2 })));
    }

    proptest! {
        #[test]
        fn offset_invariance(seed in 0u64..1000, offset in -30.0f64..30.0) {
            let events = random_events(seed, 1_000, 0.03);
            let c = calib();
            let trace = synthesize_rssi(&events, &c, &SynthParams::default()).unwrap();
            let a = experiment_stats(&trace, &c, 0.05, &DipParams::default(), 50).unwrap();
            let b = experiment_stats(&trace.shifted(offset), &c.shifted(offset), 0.05, &DipParams::default(), 50).unwrap();
            prop_assert_eq!(a.p_exp_link1, b.p_exp_link1);
            prop_assert_eq!(a.p_exp_link2, b.p_exp_link2);
            prop_assert!((0.0..=1.0).contains(&a.p_exp_mean));
        }

        #[test]
        fn count_nonincreasing_in_threshold(seed in 0u64..1000, t1 in 4.0f64..30.0, t2 in 4.0f64..30.0) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let events = random_events(seed, 1_000, 0.03);
            let params = SynthParams { noise_sigma_db: 2.0, seed, ..SynthParams::default() };
            let trace = synthesize_rssi(&events, &calib(), &params).unwrap();
            let dips = |th: f64| {
                let p = DipParams { threshold_db: th, exit_db: 3.0 };
                detect_dips(&trace, 1, &calib(), &p).unwrap().len()
            };
            prop_assert!(dips(hi) <= dips(lo));
        }
    }
}
