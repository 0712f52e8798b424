//! `simulate`: build a dataset from a `[scene]` or PLY map and a
//! `[simulation]` section.
//!
//! Writes `map.ply`, `events.txt` (or `events.txt.gz`), `groundtruth.txt`
//! sampled at the frame rate, `summary.json`, and `run.toml`, a config that
//! points `track` at the generated files.

use anyhow::{Context, Result};
use clap::Args;
use evsplat::evaluation::save_tum;
use evsplat::events::save_events;
use evsplat::gaussian_map::{load_ply, save_ply};
use evsplat::simulator::{make_trajectory, simulate_events};
use serde::Serialize;

use crate::common::{create_dir, init_threads, load_config, load_map};
use crate::{GlobalArgs, Outcome};

#[derive(Args, Debug, Clone, Default)]
pub struct SimulateArgs {
    /// Log-intensity change per event.
    #[arg(long)]
    contrast_threshold: Option<f64>,
    /// Trajectory length in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Render rate in Hz.
    #[arg(long)]
    frame_rate: Option<f64>,
    /// Gzip the event file.
    #[arg(long)]
    gzip: bool,
}

#[derive(Serialize)]
struct Summary {
    gaussians: usize,
    /// Frames rendered, including the first one.
    frames: usize,
    /// Consecutive frame pairs differenced into events.
    frame_pairs: usize,
    events: usize,
    duration: f64,
    contrast_threshold: f64,
    seed: u64,
}

pub fn run(global: &GlobalArgs, a: &SimulateArgs) -> Result<Outcome> {
    let mut cfg = load_config(global)?;
    let sim = cfg.simulation.as_mut().context("simulate needs a [simulation] section")?;
    if let Some(c) = a.contrast_threshold {
        sim.sim.contrast_threshold = c;
    }
    if let Some(d) = a.duration {
        sim.duration = d;
    }
    if let Some(r) = a.frame_rate {
        sim.sim.frame_rate = r;
    }
    // The run seed drives the simulator noise.
    sim.sim.seed = cfg.seed;
    cfg.validate()?;
    init_threads(cfg.threads)?;
    let sim = cfg.simulation.clone().context("simulate needs a [simulation] section")?;

    let dir = cfg.paths.output.clone();
    create_dir(&dir)?;
    // Events come from the map as stored, so tracking the dataset sees
    // exactly the simulated scene despite the single-precision file format.
    let map_path = dir.join("map.ply");
    save_ply(&load_map(&cfg)?, &map_path)?;
    let map = load_ply(&map_path)?;
    let traj = make_trajectory(&sim.trajectory, sim.duration, sim.sim.frame_rate)?;
    let out = simulate_events(&map, &traj, &cfg.camera, &sim.sim, false)?;

    let events_path = dir.join(if a.gzip { "events.txt.gz" } else { "events.txt" });
    save_events(&events_path, &out.events)?;
    let gt_path = dir.join("groundtruth.txt");
    save_tum(&traj, &gt_path)?;

    let summary = Summary {
        gaussians: map.len(),
        frames: out.frame_times.len(),
        frame_pairs: out.frame_times.len().saturating_sub(1),
        events: out.events.len(),
        duration: sim.duration,
        contrast_threshold: sim.sim.contrast_threshold,
        seed: cfg.seed,
    };
    let summary_path = dir.join("summary.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)? + "\n")
        .with_context(|| format!("writing {}", summary_path.display()))?;

    let mut run_cfg = cfg.clone();
    run_cfg.paths.map = Some("map.ply".into());
    run_cfg.paths.events = Some(events_path.file_name().context("event file name")?.into());
    run_cfg.paths.ground_truth = Some("groundtruth.txt".into());
    run_cfg.paths.output = "track".into();
    run_cfg.scene = None;
    let run_path = dir.join("run.toml");
    std::fs::write(&run_path, run_cfg.to_toml()?).with_context(|| format!("writing {}", run_path.display()))?;

    println!("gaussians: {}", summary.gaussians);
    println!("frames: {} ({} pairs)", summary.frames, summary.frame_pairs);
    println!("events: {}", summary.events);
    println!("output: {}", dir.display());
    Ok(Outcome::Success)
}
