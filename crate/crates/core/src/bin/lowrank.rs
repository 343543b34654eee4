use std::process::ExitCode;

use clap::Parser;
use lowrank::cli::{run, RunConfig};
use lowrank::Error;

fn main() -> ExitCode {
    let config = RunConfig::parse();
    match run(&config) {
        Ok(report) => {
            println!(
                "{}: k={} p={} achieved_error={:e} predicted_error={:e}",
                report.command, report.k, report.p, report.achieved_error, report.predicted_error
            );
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("lowrank: {err}");
            if let Error::NotConverged { trace, .. } = &err {
                for step in trace {
                    eprintln!(
                        "  Q={} achieved_error={:e}",
                        step.nodes, step.achieved_error
                    );
                }
            }
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
