mod args;
mod commands;
mod error;

use clap::Parser;

use args::{Cli, Command};

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate_cmd(a),
        Command::Analyze(a) => commands::analyze_cmd(a),
        Command::Estimate(a) => commands::estimate_cmd(a),
        Command::CalibrateCheck(a) => commands::calibrate_check_cmd(a),
        Command::Validate(a) => commands::validate_cmd(a),
        Command::Sweep(a) => commands::sweep_cmd(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
