mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RegionKind;

#[derive(Debug, Parser)]
#[command(name = "quadhook", version, about = "Plan, fly and verify hook-based aerial grasp-and-transport missions")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON run configuration; every section is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MethodArg {
    Grid,
    Swarm,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Plan the five-segment mission; writes plan.json, trajectory.csv and timing.json.
    Plan {
        /// Trajectory CSV sample rate [Hz].
        #[arg(long, default_value_t = 100.0)]
        sample_rate: f64,
    },
    /// Fly a plan in closed loop; writes trace.csv, control.csv, events.json and metrics.json.
    Simulate {
        /// Plan produced by `plan`; planned from the configuration when absent.
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Payload mass [kg]; overrides the configuration.
        #[arg(long)]
        payload_mass: Option<f64>,
    },
    /// Scenario-based region-of-attraction certificate for the hover regulator.
    Verify {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Model-mismatch disturbance bounds.
    Bounds {
        #[arg(long, value_enum)]
        region: Option<RegionKind>,
    },
    /// Tune the planner bounds and spatial weight by grid or swarm search.
    Tune {
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
    },
    /// Hover regulator gain; writes lqr.json.
    Lqr,
    /// Plan, design the regulator, fly four transport scenarios and certify the regulator.
    Reproduce {
        /// Certificate sample count; defaults to the configuration.
        #[arg(long)]
        n: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { commands::EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    ExitCode::from(commands::run(&cli) as u8)
}
