use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn crowdspeed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crowdspeed"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_arg(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        stdout(o),
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn simulate_is_byte_identical_for_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("outdoor.cfg");
    fs::write(
        &cfg,
        "scenario = closed\nb1_m = 5.5\nb2_m = 8.8\nlength_m = 4.26\nlink_x_m = 2.5, 3.7\n\
         v1_mps = 0.8\nv2_mps = 0.3\nn_people = 5\nduration_s = 120\nseed = 1\n",
    )
    .unwrap();
    let runs: Vec<_> = ["a", "b"].iter().map(|d| dir.path().join(d)).collect();
    for out in &runs {
        let o = crowdspeed(&[
            "simulate",
            "--config",
            path_arg(&cfg),
            "--seed",
            "7",
            "--out",
            path_arg(out),
            "--trajectories",
            "20",
            "--rssi",
            "--noise-db",
            "1",
        ]);
        assert_ok(&o);
    }
    for name in ["events.csv", "trajectories.csv", "rssi.csv", "calibration.txt"] {
        let a = fs::read(runs[0].join(name)).unwrap();
        let b = fs::read(runs[1].join(name)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{name} differs between runs");
    }
}

#[test]
fn artifacts_carry_config_and_seed_headers() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    assert_ok(&crowdspeed(&[
        "simulate",
        "--preset",
        "indoor",
        "--seed",
        "42",
        "--duration-s",
        "60",
        "--out",
        path_arg(&out),
        "--trajectories",
        "100",
        "--rssi",
        "--dump-chain",
    ]));
    for name in ["events.csv", "trajectories.csv", "rssi.csv", "calibration.txt", "chain.txt"] {
        let text = fs::read_to_string(out.join(name)).unwrap();
        assert!(text.starts_with("# crowdspeed simulate\n"), "{name}");
        assert!(text.contains("# seed = 42\n"), "{name} lacks the seed");
        assert!(text.contains("# b1_m = 7\n"), "{name} lacks the geometry");
    }
    // The embedded config reproduces the run.
    let events = fs::read_to_string(out.join("events.csv")).unwrap();
    let cfg: String = events
        .lines()
        .skip(1)
        .take_while(|l| l.starts_with("# "))
        .map(|l| format!("{}\n", &l[2..]))
        .collect();
    let cfg_path = dir.path().join("embedded.cfg");
    fs::write(&cfg_path, cfg).unwrap();
    let again = dir.path().join("again");
    assert_ok(&crowdspeed(&["simulate", "--config", path_arg(&cfg_path), "--out", path_arg(&again)]));
    assert_eq!(fs::read(out.join("events.csv")).unwrap(), fs::read(again.join("events.csv")).unwrap());
}

#[test]
fn estimate_labels_a_slow_then_fast_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let scenario = ["--preset", "outdoor", "--v1", "0.3", "--v2", "1.6", "--seed", "3"];
    let mut sim = vec!["simulate"];
    sim.extend(scenario);
    sim.extend(["--rssi", "--noise-db", "1", "--out", path_arg(&out)]);
    assert_ok(&crowdspeed(&sim));

    let rssi = out.join("rssi.csv");
    let calib = out.join("calibration.txt");
    let mut est = vec!["estimate"];
    est.extend(scenario);
    est.extend(["--rssi", path_arg(&rssi), "--calibration", path_arg(&calib)]);
    let o = crowdspeed(&est);
    assert_ok(&o);
    let text = stdout(&o);
    assert!(text.contains("label1 = Low\n"), "{text}");
    assert!(text.contains("label2 = High\n"), "{text}");
}

#[test]
fn analyze_report_is_json_after_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    assert_ok(&crowdspeed(&["simulate", "--preset", "outdoor", "--rssi", "--out", path_arg(&out)]));
    let report = dir.path().join("stats.txt");
    let events_out = dir.path().join("recovered.csv");
    assert_ok(&crowdspeed(&[
        "analyze",
        "--rssi",
        path_arg(&out.join("rssi.csv")),
        "--calibration",
        path_arg(&out.join("calibration.txt")),
        "--out",
        path_arg(&report),
        "--events-out",
        path_arg(&events_out),
    ]));
    let text = fs::read_to_string(&report).unwrap();
    let json: String = text.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n");
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    let p1 = v["p_exp_link1"].as_f64().unwrap();
    let p2 = v["p_exp_link2"].as_f64().unwrap();
    assert!((v["p_exp_mean"].as_f64().unwrap() - 0.5 * (p1 + p2)).abs() < 1e-15);
    assert_eq!(v["xcorr"].as_array().unwrap().len(), v["max_lag"].as_u64().unwrap() as usize + 1);
    // Noise-free synthetic RSSI recovers the simulated events exactly.
    let strip = |s: String| s.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n");
    assert_eq!(
        strip(fs::read_to_string(&events_out).unwrap()),
        strip(fs::read_to_string(out.join("events.csv")).unwrap())
    );
}

#[test]
fn sweep_writes_nine_rows_and_a_cdf() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = crowdspeed(&[
        "sweep",
        "--preset",
        "outdoor",
        "--n",
        "5",
        "--grid-min",
        "0.2",
        "--grid-max",
        "1.8",
        "--grid-step",
        "0.2",
        "--theta-values",
        "35,45",
        "--out",
        path_arg(&out),
    ]);
    assert_ok(&o);
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    let rows: Vec<&str> = report.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "run_id,v1_true,v2_true,v1_hat,v2_hat,nse1,nse2,label1,label2");
    assert_eq!(rows.len(), 10);
    assert!(report.contains("# nmse_any = "));
    let cdf = fs::read_to_string(out.join("nse_cdf.csv")).unwrap();
    assert_eq!(cdf.lines().filter(|l| !l.starts_with('#')).count(), 1 + 18);
    let theta = fs::read_to_string(out.join("theta.csv")).unwrap();
    let theta_rows: Vec<&str> = theta.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(theta_rows.len(), 3);
    assert!(theta_rows[1].starts_with("35,") && theta_rows[2].starts_with("45,"));
}

#[test]
fn exit_codes_separate_usage_data_and_numerical_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = path_arg(dir.path());

    assert_eq!(crowdspeed(&["simulate", "--bogus"]).status.code(), Some(2));
    assert_eq!(crowdspeed(&["simulate", "--preset", "atrium", "--out", d]).status.code(), Some(2));
    assert_eq!(
        crowdspeed(&["simulate", "--preset", "outdoor", "--n", "2.5", "--out", d]).status.code(),
        Some(2)
    );

    let missing = dir.path().join("missing.cfg");
    let o = crowdspeed(&["simulate", "--config", path_arg(&missing), "--out", d]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(String::from_utf8_lossy(&o.stderr).lines().count(), 1);

    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "scenario = closed\nb1_m = -1\n").unwrap();
    assert_eq!(
        crowdspeed(&["simulate", "--config", path_arg(&bad), "--out", d]).status.code(),
        Some(3)
    );

    // No events on either link: the correlation is undefined.
    let events = dir.path().join("quiet.csv");
    let mut text = String::from("t_s,link1,link2\n");
    for k in 0..4000 {
        text.push_str(&format!("{},0,0\n", k as f64 * 0.05));
    }
    fs::write(&events, text).unwrap();
    let o = crowdspeed(&["estimate", "--preset", "outdoor", "--events", path_arg(&events), "--max-lag", "100"]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn calibrate_check_flags_a_shifted_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    assert_ok(&crowdspeed(&["simulate", "--preset", "outdoor", "--duration-s", "60", "--rssi", "--out", path_arg(&out)]));
    let rssi = out.join("rssi.csv");
    let good = crowdspeed(&[
        "calibrate-check",
        "--calibration",
        path_arg(&out.join("calibration.txt")),
        "--rssi",
        path_arg(&rssi),
    ]);
    assert_ok(&good);

    let shifted = dir.path().join("shifted.txt");
    fs::write(
        &shifted,
        "baseline1_db = -30\nbaseline2_db = -40\nr_1_1_db = -55\nr_2_1_db = -65\nr_1_2_db = -55\nr_2_2_db = -65\n",
    )
    .unwrap();
    let o = crowdspeed(&["calibrate-check", "--calibration", path_arg(&shifted), "--rssi", path_arg(&rssi)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("FAIL link 1"));
    assert!(stdout(&o).contains("PASS link 2"));

    let inverted = dir.path().join("inverted.txt");
    fs::write(&inverted, "r_1_1_db = -65\nr_2_1_db = -55\nr_1_2_db = -55\nr_2_2_db = -65\n").unwrap();
    assert_eq!(
        crowdspeed(&["calibrate-check", "--calibration", path_arg(&inverted)]).status.code(),
        Some(3)
    );
}

#[test]
fn validate_prints_one_line_per_property() {
    let o = crowdspeed(&["validate", "--seed", "1"]);
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    let checks: Vec<&&str> = lines.iter().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).collect();
    for module in ["geometry", "analytic", "markov", "simulator", "rssi", "estimator"] {
        assert!(checks.iter().any(|l| l.contains(&format!("[{module}]"))), "no {module} check");
    }
    assert_eq!(checks.len() + 1, lines.len());
    let any_failed = checks.iter().any(|l| l.starts_with("FAIL"));
    assert_eq!(o.status.code(), Some(if any_failed { 3 } else { 0 }));
}
