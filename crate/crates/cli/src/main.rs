//! `evsplat`: track event streams against splat maps, simulate datasets,
//! evaluate trajectories and render debug views.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 tracking finished with at
//! least one divergent keyframe.

mod common;
mod evaluate;
mod render;
mod simulate;
mod track;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "evsplat", version, about = "Event-camera tracking against Gaussian splat maps")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GlobalArgs {
    /// Sectioned TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; 0 uses every core. Overrides the config.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Random seed. Overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory. Overrides the config.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Track an event stream and write the estimated trajectory.
    Track(track::TrackArgs),
    /// Generate a map, trajectory, events and ground truth.
    Simulate(simulate::SimulateArgs),
    /// Align the first pose and print the absolute trajectory error.
    Evaluate(evaluate::EvaluateArgs),
    /// Render the map from one pose into a PNG.
    Render(render::RenderArgs),
}

/// What a command reports back besides errors.
pub enum Outcome {
    Success,
    Diverged,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.global.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Track(a) => track::run(&cli.global, &a),
        Command::Simulate(a) => simulate::run(&cli.global, &a),
        Command::Evaluate(a) => evaluate::run(&cli.global, &a),
        Command::Render(a) => render::run(&cli.global, &a),
    };
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Diverged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
