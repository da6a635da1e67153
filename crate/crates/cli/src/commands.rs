use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crowdspeed::estimator::{estimate, sensitivity_sweep, SpeedGrid};
use crowdspeed::experiment::{evaluate_outcomes, run_trials, standard_runs, PipelineSettings};
use crowdspeed::geometry::{load_scenario, Population, Scenario, ScenarioConfig};
use crowdspeed::markov::{build_position_chain, default_grid_step};
use crowdspeed::rssi::{
    estimate_baseline, synthesize_rssi, trace_events, CalibrationTable, DipParams, ExperimentalStats, RssiTrace,
    SynthParams, DEFAULT_DIP_EXIT_DB,
};
use crowdspeed::simulator::{
    default_max_lag, derive_seed, read_events_csv, simulate, write_events_csv, write_trajectories_csv,
    EventSequence, ModelCorrelator, SimOptions,
};
use crowdspeed::validate::{run_suite, SuiteOptions};

use crate::args::{
    AnalyzeArgs, CalibrateCheckArgs, DipArgs, EstimateArgs, GridArgs, InputArgs, ScenarioArgs, SimulateArgs,
    SweepArgs, ValidateArgs,
};
use crate::error::CliError;

// Stream tags for seeds derived from the master seed.
const RSSI_NOISE_STREAM: u64 = 0x5253_5349;
const MODEL_STREAM: u64 = 0x4d4f_4445;

fn resolve_config(args: &ScenarioArgs, n: Option<f64>) -> Result<ScenarioConfig, CliError> {
    let mut config = match (&args.config, &args.preset) {
        (Some(path), _) => load_scenario(path)?,
        (None, Some(name)) => ScenarioConfig::preset(name)?,
        (None, None) => ScenarioConfig::preset("outdoor")?,
    };
    if let Some(seed) = args.seed {
        config.rng_seed = seed;
    }
    if let Some(d) = args.duration_s {
        config.duration = d;
    }
    if let Some(t) = args.theta_max_deg {
        config.motion.theta_max_deg = t;
    }
    if let Some(v) = args.v1 {
        config.motion.speed_region1 = v;
    }
    if let Some(v) = args.v2 {
        config.motion.speed_region2 = v;
    }
    if let Some(n) = n {
        config.population = match config.motion.scenario {
            Scenario::Closed if n >= 1.0 && n.fract() == 0.0 && n <= u32::MAX as f64 => Population::Fixed(n as u32),
            Scenario::Closed => {
                return Err(CliError::Usage(format!("--n must be a positive integer for a closed area, got {n}")))
            }
            Scenario::Open => Population::Average(n),
        };
    }
    config.validate()?;
    Ok(config)
}

fn grid_of(args: &GridArgs) -> Result<SpeedGrid, CliError> {
    Ok(SpeedGrid::new(args.grid_min, args.grid_max, args.grid_step)?)
}

fn dip_of(args: &DipArgs) -> DipParams {
    DipParams {
        threshold_db: args.dip_threshold_db,
        exit_db: DEFAULT_DIP_EXIT_DB.min(args.dip_threshold_db),
    }
}

fn header(command: &str, config: &ScenarioConfig, extra: &[(&str, String)]) -> String {
    let mut h = format!("# crowdspeed {command}\n");
    h.push_str(&config.as_comment_block());
    for (k, v) in extra {
        h.push_str(&format!("# {k} = {v}\n"));
    }
    h
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

/// Report text goes to `path`, or stdout when there is none.
fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => write_file(p, |w| w.write_all(text.as_bytes())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn model_correlator(steps: usize, seed: u64) -> ModelCorrelator {
    ModelCorrelator::new(steps, derive_seed(seed, &[MODEL_STREAM]))
}

pub fn simulate_cmd(args: &SimulateArgs) -> Result<(), CliError> {
    let config = resolve_config(&args.scenario, args.n)?;
    create_dir(&args.out)?;
    let opts = SimOptions {
        trajectory_stride: args.trajectories,
        ..SimOptions::default()
    };
    let out = simulate(&config, &opts)?;
    let head = header("simulate", &config, &[]);
    let events_path = args.out.join("events.csv");
    write_file(&events_path, |w| write_events_csv(w, &out.events, &head))?;
    println!(
        "wrote {} ({} steps, {} + {} events)",
        events_path.display(),
        out.events[0].len(),
        out.events[0].event_count(),
        out.events[1].event_count()
    );
    if args.trajectories.is_some() {
        let path = args.out.join("trajectories.csv");
        write_file(&path, |w| write_trajectories_csv(w, &out.trajectories, &head))?;
        println!("wrote {} ({} rows)", path.display(), out.trajectories.len());
    }
    if args.rssi {
        let calib = CalibrationTable::synthetic(args.baseline_db);
        let synth = SynthParams {
            noise_sigma_db: args.noise_db,
            seed: derive_seed(config.rng_seed, &[RSSI_NOISE_STREAM]),
            ..SynthParams::default()
        };
        let trace = synthesize_rssi(&out.events, &calib, &synth)?;
        let rssi_head = header("simulate", &config, &[("noise_db", args.noise_db.to_string())]);
        let path = args.out.join("rssi.csv");
        write_file(&path, |w| trace.write_csv(w, &rssi_head))?;
        let calib_path = args.out.join("calibration.txt");
        write_file(&calib_path, |w| {
            w.write_all(rssi_head.as_bytes())?;
            w.write_all(calib.to_text().as_bytes())
        })?;
        println!("wrote {} ({} samples) and {}", path.display(), trace.len(), calib_path.display());
    }
    if args.dump_chain {
        let chain = build_position_chain(&config, default_grid_step(&config))?;
        let extra = [
            ("grid_step_m", chain.grid_step.to_string()),
            ("region1_cells", chain.n1.to_string()),
            ("region2_cells", chain.n2.to_string()),
        ];
        let chain_head = header("simulate", &config, &extra);
        let path = args.out.join("chain.txt");
        write_file(&path, |w| {
            w.write_all(chain_head.as_bytes())?;
            chain.transition.write_triplets(w)
        })?;
        println!("wrote {} ({} states)", path.display(), chain.transition.dim());
    }
    Ok(())
}

type HeaderLines = Vec<(&'static str, String)>;

/// Event sequences from either input kind, plus header lines naming it.
fn load_events(
    input: &InputArgs,
    config: &ScenarioConfig,
    dip: &DipParams,
) -> Result<([EventSequence; 2], HeaderLines), CliError> {
    let dt = config.motion.time_step;
    if let Some(path) = &input.events {
        let file = File::open(path).map_err(|e| CliError::io(path, e))?;
        let events = read_events_csv(io::BufReader::new(file))?;
        if (events[0].dt - dt).abs() > 1e-9 * dt {
            return Err(CliError::Data(format!(
                "{}: time step {} s does not match the scenario's {dt} s",
                path.display(),
                events[0].dt
            )));
        }
        return Ok((events, vec![("events", path.display().to_string())]));
    }
    let (Some(rssi), Some(calib_path)) = (&input.rssi, &input.calibration) else {
        return Err(CliError::Usage("either --events or --rssi with --calibration is required".into()));
    };
    let trace = RssiTrace::load(rssi)?;
    let calib = CalibrationTable::load(calib_path)?;
    let events = trace_events(&trace, &calib, dt, dip)?;
    let lines = vec![
        ("rssi", rssi.display().to_string()),
        ("calibration", calib_path.display().to_string()),
        ("dip_threshold_db", dip.threshold_db.to_string()),
        ("dip_exit_db", dip.exit_db.to_string()),
    ];
    Ok((events, lines))
}

fn stats_of(events: [EventSequence; 2], config: &ScenarioConfig, grid: &GridArgs) -> Result<ExperimentalStats, CliError> {
    let len = events[0].len();
    let max_lag = grid.max_lag.unwrap_or_else(|| {
        default_max_lag(config.geometry.region1_width, grid.grid_min, config.motion.time_step, len)
    });
    Ok(ExperimentalStats::from_events(events, max_lag))
}

#[derive(Serialize)]
struct StatsReport {
    dt_s: f64,
    steps: usize,
    events_link1: usize,
    events_link2: usize,
    p_exp_link1: f64,
    p_exp_link2: f64,
    p_exp_mean: f64,
    crossings_per_min: f64,
    max_lag: Option<usize>,
    xcorr_peak_lag: Option<usize>,
    xcorr_error: Option<String>,
    xcorr: Vec<f64>,
}

pub fn analyze_cmd(args: &AnalyzeArgs) -> Result<(), CliError> {
    let config = resolve_config(&args.scenario, None)?;
    let dip = dip_of(&args.dip);
    let (events, mut lines) = load_events(&args.input, &config, &dip)?;
    let stats = stats_of(events, &config, &args.grid)?;
    let (xcorr, xcorr_error) = match &stats.xcorr {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let report = StatsReport {
        dt_s: stats.dt(),
        steps: stats.len(),
        events_link1: stats.events[0].event_count(),
        events_link2: stats.events[1].event_count(),
        p_exp_link1: stats.p_exp_link1,
        p_exp_link2: stats.p_exp_link2,
        p_exp_mean: stats.p_exp_mean,
        crossings_per_min: 60.0 * stats.p_exp_mean / stats.dt(),
        max_lag: xcorr.map(|r| r.max_lag()),
        xcorr_peak_lag: xcorr.map(|r| r.peak_lag()),
        xcorr_error,
        xcorr: xcorr.map(|r| r.values.clone()).unwrap_or_default(),
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Data(e.to_string()))?;
    if let Some(path) = &args.events_out {
        lines.push(("events_out", path.display().to_string()));
    }
    let head = header("analyze", &config, &lines);
    if let Some(path) = &args.events_out {
        write_file(path, |w| write_events_csv(w, &stats.events, &head))?;
    }
    emit(args.out.as_deref(), &format!("{head}{json}\n"))
}

pub fn estimate_cmd(args: &EstimateArgs) -> Result<(), CliError> {
    let config = resolve_config(&args.scenario, args.n)?;
    let grid = grid_of(&args.grid)?;
    let dip = dip_of(&args.dip);
    let (events, mut lines) = load_events(&args.input, &config, &dip)?;
    let stats = stats_of(events, &config, &args.grid)?;
    let correlator = model_correlator(args.model_steps, config.rng_seed);
    let est = estimate(&stats, &config, &grid, &correlator)?;
    lines.push(("model_steps", args.model_steps.to_string()));
    lines.push((
        "grid",
        format!("{}..{} step {}", args.grid.grid_min, args.grid.grid_max, args.grid.grid_step),
    ));
    let mut text = header("estimate", &config, &lines);
    let mut kv = |k: &str, v: String| text.push_str(&format!("{k} = {v}\n"));
    kv("v1_hat_mps", est.v1_hat.to_string());
    kv("v2_hat_mps", est.v2_hat.to_string());
    kv("label1", est.labels[0].to_string());
    kv("label2", est.labels[1].to_string());
    if let Some(l) = est.lambda_hat {
        kv("lambda_hat_per_min", format!("{:.6}", 60.0 * l));
    }
    kv("p_exp_mean", format!("{:.8}", stats.p_exp_mean));
    kv("xcorr_residual", format!("{:.6e}", est.xcorr_residual));
    kv("pc_residual", format!("{:.6e}", est.pc_residual));
    kv("stage1_v2_mps", est.stage1_v2.to_string());
    emit(args.out.as_deref(), &text)
}

pub fn calibrate_check_cmd(args: &CalibrateCheckArgs) -> Result<(), CliError> {
    let calib = CalibrationTable::load(&args.calibration)?;
    println!("calibration {} is consistent", args.calibration.display());
    print!("{}", calib.to_text());
    let Some(rssi) = &args.rssi else {
        return Ok(());
    };
    let trace = RssiTrace::load(rssi)?;
    let (start, end) = match args.window_s.as_deref() {
        Some([a, b]) => (*a, *b),
        _ => (f64::NEG_INFINITY, f64::INFINITY),
    };
    let mut failures = 0;
    for link in [1u8, 2] {
        let measured = estimate_baseline(&trace, link, start, end)?;
        match calib.baseline(link) {
            Ok(table) => {
                let diff = measured - table;
                let ok = diff.abs() <= args.tolerance_db;
                failures += usize::from(!ok);
                println!(
                    "{} link {link}: trace median {measured:.2} dB, table baseline {table:.2} dB, difference {diff:+.2} dB",
                    if ok { "PASS" } else { "FAIL" }
                );
            }
            Err(_) => println!("INFO link {link}: trace median {measured:.2} dB, no baseline in table"),
        }
    }
    if failures > 0 {
        return Err(CliError::Data(format!(
            "{failures} link baseline(s) off by more than {} dB",
            args.tolerance_db
        )));
    }
    Ok(())
}

pub fn validate_cmd(args: &ValidateArgs) -> Result<(), CliError> {
    let checks = run_suite(&SuiteOptions { seed: args.seed });
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} of {} checks passed", checks.len() - failed, checks.len());
    if failed > 0 {
        return Err(CliError::Data(format!("{failed} invariant check(s) failed")));
    }
    Ok(())
}

pub fn sweep_cmd(args: &SweepArgs) -> Result<(), CliError> {
    let base = resolve_config(&args.scenario, None)?;
    if base.motion.scenario != Scenario::Closed {
        return Err(CliError::Usage("sweep needs a closed-area scenario".into()));
    }
    let grid = grid_of(&args.grid)?;
    let geometries = if args.geometry.is_empty() {
        vec![base.geometry]
    } else {
        args.geometry
            .iter()
            .map(|name| ScenarioConfig::preset(name).map(|c| c.geometry))
            .collect::<Result<_, _>>()?
    };
    let head_counts = if args.n.is_empty() {
        match base.population {
            Population::Fixed(n) => vec![n],
            _ => return Err(CliError::Usage("--n is required".into())),
        }
    } else {
        args.n.clone()
    };
    if head_counts.contains(&0) {
        return Err(CliError::Usage("--n values must be at least 1".into()));
    }
    let runs = standard_runs(&base, &geometries, &head_counts, base.rng_seed);
    let settings = PipelineSettings {
        dip: dip_of(&args.dip),
        noise_sigma_db: args.noise_db,
        max_lag: args.grid.max_lag,
        ..PipelineSettings::default()
    };
    let correlator = model_correlator(args.model_steps, base.rng_seed);
    let outcomes = run_trials(&runs, &grid, &settings, &correlator)?;
    let report = evaluate_outcomes(&outcomes)?;

    let extra = [
        (
            "sweep_geometries",
            if args.geometry.is_empty() { "scenario".to_string() } else { args.geometry.join(",") },
        ),
        (
            "sweep_n",
            head_counts.iter().map(u32::to_string).collect::<Vec<_>>().join(","),
        ),
        ("model_steps", args.model_steps.to_string()),
        ("noise_db", args.noise_db.to_string()),
        ("dip_threshold_db", args.dip.dip_threshold_db.to_string()),
        (
            "grid",
            format!("{}..{} step {}", args.grid.grid_min, args.grid.grid_max, args.grid.grid_step),
        ),
    ];
    let head = header("sweep", &base, &extra);
    create_dir(&args.out)?;
    let report_path = args.out.join("report.csv");
    write_file(&report_path, |w| report.write_csv(w, &head))?;
    let cdf_path = args.out.join("nse_cdf.csv");
    write_file(&cdf_path, |w| report.write_cdf_csv(w, &head))?;
    println!(
        "{} runs: nmse_v1 {:.4}, nmse_v2 {:.4}, nmse {:.4}, accuracy {:.3}",
        report.rows.len(),
        report.nmse_v1,
        report.nmse_v2,
        report.nmse_any,
        report.classification_accuracy
    );
    println!("wrote {} and {}", report_path.display(), cdf_path.display());

    if !args.theta_values.is_empty() {
        let trials: Vec<_> = outcomes.into_iter().map(|o| o.trial).collect();
        let rows = sensitivity_sweep(&trials, &grid, &args.theta_values, &correlator)?;
        let path = args.out.join("theta.csv");
        write_file(&path, |w| {
            w.write_all(head.as_bytes())?;
            writeln!(w, "theta_max_deg,nmse_v1,nmse_v2,nmse,classification_accuracy")?;
            for r in &rows {
                let rep = &r.report;
                writeln!(
                    w,
                    "{},{:.6},{:.6},{:.6},{:.6}",
                    r.theta_max_deg, rep.nmse_v1, rep.nmse_v2, rep.nmse_any, rep.classification_accuracy
                )?;
            }
            Ok(())
        })?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
