//! Self-check suite: every invariant of the model and pipeline, evaluated
//! on freshly generated data, reported as pass/fail lines.

use std::fmt;

use crate::analytic::{p_cross_n_closed, p_cross_open, p_cross_single, time_avg};
use crate::estimator::{closed_stage2_objectives, estimate_closed, SpeedGrid};
use crate::geometry::{Population, ScenarioConfig};
use crate::markov::{
    aggregated_chain, build_position_chain, default_grid_step, max_abs_asymmetry, max_row_sum_error, stationary,
    stochastic_complements, two_state_stationary,
};
use crate::rssi::{
    detect_dips, experiment_stats, score_recovery, synthesize_rssi, trace_events, CalibrationTable, DipParams,
    SynthParams,
};
use crate::simulator::{
    closed_crossing_counts, cross_correlation, model_cross_correlation, simulate_closed, simulate_open, x_occupancy,
    ModelCorrelator, SimOptions,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub module: &'static str,
    pub property: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} [{}] {}: {}", self.module, self.property, self.detail)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SuiteOptions {
    pub seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self { seed: 1 }
    }
}

fn check(
    module: &'static str,
    property: &'static str,
    body: impl FnOnce() -> Result<(bool, String), String>,
) -> Check {
    let (passed, detail) = body().unwrap_or_else(|e| (false, format!("error: {e}")));
    Check {
        module,
        property,
        passed,
        detail,
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn outdoor(seed: u64) -> ScenarioConfig {
    let mut c = ScenarioConfig::preset("outdoor").expect("bundled preset");
    c.rng_seed = seed;
    c
}

/// Run every check.
pub fn run_suite(opts: &SuiteOptions) -> Vec<Check> {
    let seed = opts.seed;
    let mut out = Vec::new();

    out.push(check("geometry", "config text round-trip", || {
        let mut bad = Vec::new();
        for name in ScenarioConfig::preset_names() {
            let c = ScenarioConfig::preset(name).expect("bundled preset");
            match ScenarioConfig::parse(&c.to_config_string()) {
                Ok(back) if back == c => {}
                _ => bad.push(*name),
            }
        }
        Ok((bad.is_empty(), format!("{} presets, mismatches: {bad:?}", ScenarioConfig::preset_names().len())))
    }));

    out.push(check("analytic", "open-area probability equals arrival rate times dt", || {
        let g = outdoor(seed).geometry;
        let (v1, v2, lambda, dt) = (0.8, 0.3, 1.0 / 60.0, 0.05);
        let n_avg = lambda * time_avg(v1, v2, &g);
        p_cross_open(v1, v2, dt, &g, n_avg)
            .map(|p| {
                let err = rel(p.per_step, lambda * dt);
                (err < 1e-12, format!("relative difference {err:.2e}"))
            })
            .map_err(|e| e.to_string())
    }));

    out.push(check("analytic", "crossing probability increases with each speed and N", || {
        let c = outdoor(seed);
        let grid = SpeedGrid::default();
        let theta = c.motion.theta_max();
        let mut ok = true;
        for &a in grid.values() {
            let mut prev = [0.0; 2];
            for &b in grid.values() {
                let p1 = p_cross_single(a, b, 0.05, &c.geometry, theta).map_err(|e| e.to_string())?;
                let p2 = p_cross_single(b, a, 0.05, &c.geometry, theta).map_err(|e| e.to_string())?;
                ok &= p1.per_step > prev[0] && p2.per_step > prev[1];
                prev = [p1.per_step, p2.per_step];
                let n5 = p_cross_n_closed(p1.per_step, 5).map_err(|e| e.to_string())?.per_step;
                let n9 = p_cross_n_closed(p1.per_step, 9).map_err(|e| e.to_string())?.per_step;
                ok &= n9 > n5;
            }
        }
        Ok((ok, format!("{} speed pairs", grid.values().len().pow(2))))
    }));

    let speed_pairs = [(0.8, 0.3), (0.3, 1.6), (1.6, 0.8)];
    out.push(check("markov", "transition matrix is row-stochastic", || {
        let mut worst: f64 = 0.0;
        for &(v1, v2) in &speed_pairs {
            let c = outdoor(seed).with_speeds(v1, v2);
            let chain = build_position_chain(&c, default_grid_step(&c)).map_err(|e| e.to_string())?;
            worst = worst.max(chain.transition.max_row_sum_error());
        }
        Ok((worst <= 1e-12, format!("max row-sum error {worst:.2e}")))
    }));

    out.push(check("markov", "stationary vector flat per region, occupancy matches closed form", || {
        let mut worst_flat: f64 = 0.0;
        let mut worst_occ: f64 = 0.0;
        for &(v1, v2) in &speed_pairs {
            let c = outdoor(seed).with_speeds(v1, v2);
            let chain = build_position_chain(&c, default_grid_step(&c)).map_err(|e| e.to_string())?;
            let pi = stationary(&chain).map_err(|e| e.to_string())?;
            worst_flat = worst_flat.max(pi.max_relative_deviation);
            let agg = two_state_stationary(&aggregated_chain(&chain)).map_err(|e| e.to_string())?;
            let (b1, b2) = (c.geometry.region1_width, c.geometry.region2_width);
            let c1 = v2 * b1 / (v1 * b2 + v2 * b1);
            worst_occ = worst_occ.max(rel(agg.0, c1)).max(rel(agg.1, 1.0 - c1));
        }
        Ok((
            worst_flat <= 1e-6 && worst_occ <= 0.02,
            format!("max in-region deviation {worst_flat:.2e}, max occupancy error {:.3}%", 100.0 * worst_occ),
        ))
    }));

    out.push(check("markov", "stochastic complements symmetric and row-stochastic", || {
        let mut worst: f64 = 0.0;
        for &(v1, v2) in &speed_pairs {
            let c = outdoor(seed).with_speeds(v1, v2);
            let chain = build_position_chain(&c, default_grid_step(&c)).map_err(|e| e.to_string())?;
            let (s11, s22) = stochastic_complements(&chain).map_err(|e| e.to_string())?;
            for s in [&s11, &s22] {
                worst = worst.max(max_abs_asymmetry(s)).max(max_row_sum_error(s));
            }
        }
        Ok((worst <= 1e-10, format!("max deviation {worst:.2e}")))
    }));

    out.push(check("simulator", "identical seed reproduces event sequences", || {
        let mut c = outdoor(seed);
        c.duration = 120.0;
        let a = simulate_closed(&c, &SimOptions::default()).map_err(|e| e.to_string())?;
        let b = simulate_closed(&c, &SimOptions::default()).map_err(|e| e.to_string())?;
        Ok((a.events == b.events, format!("{} steps compared", a.events[0].len())))
    }));

    out.push(check("simulator", "closed population is conserved", || {
        let c = outdoor(seed);
        let n = 5;
        let opts = SimOptions {
            trajectory_stride: Some(200),
            ..SimOptions::default()
        };
        let out = simulate_closed(&c, &opts).map_err(|e| e.to_string())?;
        let mut per_time = std::collections::BTreeMap::new();
        for r in &out.trajectories {
            *per_time.entry((r.t * 1e6).round() as i64).or_insert(0usize) += 1;
        }
        let ok = per_time.values().all(|&k| k == n)
            && out.events.iter().all(|s| s.samples.iter().all(|&v| v as usize <= n));
        Ok((ok, format!("{} snapshots of {n} walkers", per_time.len())))
    }));

    out.push(check("simulator", "open flow balance", || {
        let mut c = ScenarioConfig::preset("costco-aisle").expect("bundled preset");
        c.rng_seed = seed;
        c.motion.arrival_rate_per_min = Some(4.0);
        c.duration = 3600.0;
        let out = simulate_open(&c, &SimOptions::default()).map_err(|e| e.to_string())?;
        Ok((
            out.arrivals - out.departures == out.final_population,
            format!(
                "{} arrivals, {} departures, {} inside at end",
                out.arrivals, out.departures, out.final_population
            ),
        ))
    }));

    out.push(check("simulator", "region occupancy flat and matching closed form", || {
        let c = outdoor(seed);
        let bins = 5;
        let hist = x_occupancy(&c, bins, 20, 2_500_000, 10_000);
        let total: u64 = hist.iter().sum();
        let flat = |h: &[u64]| {
            let mean = h.iter().sum::<u64>() as f64 / h.len() as f64;
            h.iter().map(|&v| rel(v as f64, mean)).fold(0.0, f64::max)
        };
        let worst_flat = flat(&hist[..bins]).max(flat(&hist[bins..]));
        let (v1, v2) = (c.motion.speed_region1, c.motion.speed_region2);
        let (b1, b2) = (c.geometry.region1_width, c.geometry.region2_width);
        let c1 = v2 * b1 / (v1 * b2 + v2 * b1);
        let c1_hat = hist[..bins].iter().sum::<u64>() as f64 / total as f64;
        let occ_err = rel(c1_hat, c1);
        Ok((
            worst_flat <= 0.02 && occ_err <= 0.03,
            format!(
                "max bin deviation {:.2}%, region-1 share {c1_hat:.4} vs {c1:.4} ({:.2}%)",
                100.0 * worst_flat,
                100.0 * occ_err
            ),
        ))
    }));

    out.push(check("simulator", "single-walker crossing frequency matches closed form", || {
        let base = outdoor(seed);
        let mut worst: (f64, f64, f64) = (0.0, 0.0, 0.0);
        for &v1 in &[0.3, 0.8, 1.6] {
            for &v2 in &[0.3, 0.8, 1.6] {
                let c = base.with_speeds(v1, v2);
                let counts = closed_crossing_counts(&c, 20, 1_000_000, 10_000);
                let p = p_cross_single(v1, v2, c.motion.time_step, &c.geometry, c.motion.theta_max())
                    .map_err(|e| e.to_string())?;
                for link in 0..2 {
                    let err = rel(counts.frequency(link), p.per_step);
                    if err > worst.0 {
                        worst = (err, v1, v2);
                    }
                }
            }
        }
        Ok((
            worst.0 <= 0.03,
            format!("worst relative error {:.2}% at ({}, {})", 100.0 * worst.0, worst.1, worst.2),
        ))
    }));

    out.push(check("simulator", "crossing frequencies equal at both links", || {
        let c = outdoor(seed);
        let counts = closed_crossing_counts(&c, 1, 10_000_000, 10_000);
        let z = two_proportion_z(counts.link[0], counts.link[1], counts.walker_steps);
        Ok((z.abs() < 2.5758, format!("z = {z:.3} ({} vs {} crossings)", counts.link[0], counts.link[1])))
    }));

    out.push(check("simulator", "cross-correlation independent of head count", || {
        let mut c = outdoor(seed);
        let steps = 200_000;
        let max_lag = 600;
        c.population = Population::Fixed(1);
        let opts = SimOptions {
            steps: Some(steps),
            ..SimOptions::default()
        };
        let one = simulate_closed(&c, &opts).map_err(|e| e.to_string())?;
        c.population = Population::Fixed(9);
        let nine = simulate_closed(&c, &opts).map_err(|e| e.to_string())?;
        let r1 = cross_correlation(&one.events[0], &one.events[1], max_lag).map_err(|e| e.to_string())?;
        let r9 = cross_correlation(&nine.events[0], &nine.events[1], max_lag).map_err(|e| e.to_string())?;
        let d = r1.max_abs_diff(&r9);
        Ok((d <= 0.05, format!("max difference {d:.4} over {} lags", max_lag + 1)))
    }));

    out.push(check("simulator", "correlation peak moves earlier with faster region-1 speed", || {
        let c = outdoor(seed);
        let mut peaks = Vec::new();
        for &v1 in &[0.6, 0.8, 1.2, 1.6] {
            let r = model_cross_correlation(v1, 0.8, &c, 400_000, 400).map_err(|e| e.to_string())?;
            peaks.push(r.peak_lag());
        }
        Ok((peaks.windows(2).all(|w| w[1] <= w[0]), format!("peak lags {peaks:?}")))
    }));

    let calib = CalibrationTable::synthetic(-40.0);
    let mut sim_cfg = outdoor(seed);
    sim_cfg.duration = 600.0;
    let sim = simulate_closed(&sim_cfg, &SimOptions::default());

    out.push(check("rssi", "zero-noise RSSI round trip is exact", || {
        let sim = sim.as_ref().map_err(|e| e.to_string())?;
        let trace = synthesize_rssi(&sim.events, &calib, &SynthParams::default()).map_err(|e| e.to_string())?;
        let back = trace_events(&trace, &calib, 0.05, &DipParams::default()).map_err(|e| e.to_string())?;
        let events: usize = sim.events.iter().map(|s| s.event_count()).sum();
        Ok((back == sim.events, format!("{events} events")))
    }));

    out.push(check("rssi", "noisy RSSI keeps precision and recall at 99%", || {
        let sim = sim.as_ref().map_err(|e| e.to_string())?;
        let params = SynthParams {
            noise_sigma_db: 1.0,
            seed,
            ..SynthParams::default()
        };
        let trace = synthesize_rssi(&sim.events, &calib, &params).map_err(|e| e.to_string())?;
        let back = trace_events(&trace, &calib, 0.05, &DipParams::default()).map_err(|e| e.to_string())?;
        let mut worst: f64 = 1.0;
        for (b, e) in back.iter().zip(&sim.events) {
            let s = score_recovery(b, e);
            worst = worst.min(s.precision()).min(s.recall());
        }
        Ok((worst >= 0.99, format!("worst of precision/recall {worst:.4}")))
    }));

    out.push(check("rssi", "probabilities invariant under a dB offset", || {
        let sim = sim.as_ref().map_err(|e| e.to_string())?;
        let trace = synthesize_rssi(&sim.events, &calib, &SynthParams::default()).map_err(|e| e.to_string())?;
        let dip = DipParams::default();
        let a = experiment_stats(&trace, &calib, 0.05, &dip, 100).map_err(|e| e.to_string())?;
        let b = experiment_stats(&trace.shifted(-17.5), &calib.shifted(-17.5), 0.05, &dip, 100)
            .map_err(|e| e.to_string())?;
        let ok = a.p_exp_link1 == b.p_exp_link1
            && a.p_exp_link2 == b.p_exp_link2
            && (0.0..=1.0).contains(&a.p_exp_mean);
        Ok((ok, format!("p_exp = {:.5} before and {:.5} after", a.p_exp_mean, b.p_exp_mean)))
    }));

    out.push(check("rssi", "event count non-increasing in dip threshold", || {
        let sim = sim.as_ref().map_err(|e| e.to_string())?;
        let params = SynthParams {
            noise_sigma_db: 3.0,
            seed,
            ..SynthParams::default()
        };
        let trace = synthesize_rssi(&sim.events, &calib, &params).map_err(|e| e.to_string())?;
        let mut counts = Vec::new();
        for th in [4.0, 6.0, 8.0, 12.0, 16.0, 20.0, 30.0] {
            let p = DipParams {
                threshold_db: th,
                exit_db: 3.0,
            };
            counts.push(detect_dips(&trace, 1, &calib, &p).map_err(|e| e.to_string())?.len());
        }
        Ok((counts.windows(2).all(|w| w[1] <= w[0]), format!("dip counts {counts:?}")))
    }));

    out.push(check("estimator", "stage 2 has a unique minimiser at the true speed", || {
        let c = outdoor(seed);
        let grid = SpeedGrid::default();
        let m = &c.motion;
        let mut ok = true;
        for &v1 in &[0.3, 0.8, 1.6] {
            for &v2 in grid.values() {
                let single =
                    p_cross_single(v1, v2, m.time_step, &c.geometry, m.theta_max()).map_err(|e| e.to_string())?;
                let p = p_cross_n_closed(single.per_step, 5).map_err(|e| e.to_string())?.per_step;
                let obj = closed_stage2_objectives(p, v1, 5, &c, &grid).map_err(|e| e.to_string())?;
                let best = (0..obj.len()).fold(0, |b, i| if obj[i] < obj[b] { i } else { b });
                ok &= grid.values()[best] == v2 && obj.iter().filter(|&&o| o <= obj[best]).count() == 1;
            }
        }
        Ok((ok, format!("{} exact inversions", 3 * grid.values().len())))
    }));

    // A small grid and short model runs keep the estimator checks fast; the
    // properties hold for any grid.
    let small_grid = SpeedGrid::new(0.4, 1.6, 0.4).expect("valid grid");
    let correlator = ModelCorrelator::new(100_000, seed);
    let stats = sim.as_ref().ok().map(|s| {
        crate::rssi::ExperimentalStats::from_events(s.events.clone(), 600)
    });

    out.push(check("estimator", "stage 1 ignores the declared head count", || {
        let stats = stats.as_ref().ok_or("simulation failed")?;
        let mut c = outdoor(seed);
        let a = estimate_closed(stats, &c, &small_grid, &correlator).map_err(|e| e.to_string())?;
        c.population = Population::Fixed(9);
        let b = estimate_closed(stats, &c, &small_grid, &correlator).map_err(|e| e.to_string())?;
        Ok((
            a.v1_hat == b.v1_hat && a.stage1_v2 == b.stage1_v2,
            format!("v1_hat {} with N=5 and {} with N=9", a.v1_hat, b.v1_hat),
        ))
    }));

    out.push(check("estimator", "stage 2 optimum not improved by grid neighbours", || {
        let stats = stats.as_ref().ok_or("simulation failed")?;
        let c = outdoor(seed);
        let e = estimate_closed(stats, &c, &small_grid, &correlator).map_err(|e| e.to_string())?;
        let obj = closed_stage2_objectives(stats.p_exp_mean, e.v1_hat, 5, &c, &small_grid)
            .map_err(|e| e.to_string())?;
        let i = small_grid.values().iter().position(|&v| v == e.v2_hat).ok_or("estimate off grid")?;
        let ok = (i == 0 || obj[i - 1] >= obj[i]) && (i + 1 == obj.len() || obj[i + 1] >= obj[i]);
        Ok((ok, format!("v2_hat {} with residual {:.3e}", e.v2_hat, e.pc_residual)))
    }));

    out.push(check("estimator", "estimates are deterministic", || {
        let stats = stats.as_ref().ok_or("simulation failed")?;
        let c = outdoor(seed);
        let a = estimate_closed(stats, &c, &small_grid, &correlator).map_err(|e| e.to_string())?;
        let fresh = ModelCorrelator::new(100_000, seed);
        let b = estimate_closed(stats, &c, &small_grid, &fresh).map_err(|e| e.to_string())?;
        Ok((a == b, format!("({}, {}) twice", a.v1_hat, a.v2_hat)))
    }));

    out
}

/// Pooled two-proportion z statistic for `x1` and `x2` successes out of `n`
/// trials each.
pub fn two_proportion_z(x1: u64, x2: u64, n: u64) -> f64 {
    let n = n as f64;
    let (p1, p2) = (x1 as f64 / n, x2 as f64 / n);
    let pooled = (x1 + x2) as f64 / (2.0 * n);
    let se = (pooled * (1.0 - pooled) * 2.0 / n).sqrt();
    if se == 0.0 {
        0.0
    } else {
        (p1 - p2) / se
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn z_statistic_arithmetic() {
        assert_eq!(two_proportion_z(10, 10, 1000), 0.0);
        // p1 = 0.02, p2 = 0.01, pooled 0.015: z = 0.01 / sqrt(0.015·0.985·2/1000).
        let z = two_proportion_z(20, 10, 1000);
        assert!((z - 0.01 / (0.015f64 * 0.985 * 0.002).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn check_formatting() {
        let c = check("m", "prop", || Ok((true, "fine".into())));
        assert_eq!(c.to_string(), "PASS [m] prop: fine");
        let c = check("m", "prop", || Err("boom".into()));
        assert!(!c.passed);
        assert_eq!(c.to_string(), "FAIL [m] prop: error: boom");
    }
}
