//! `track`: register every keyframe of an event stream.
//!
//! Writes `trajectory.txt` (TUM), `diagnostics.jsonl` (one JSON object per
//! keyframe) and, with `--dump-images`, the event and rendered change images
//! of every keyframe under `images/`.

use std::fs::File;
use std::io::{BufWriter, Cursor, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use evsplat::config::{Input, RunConfig};
use evsplat::evaluation::{align_first_pose, ate, load_tum, read_tum, save_tum};
use evsplat::events::{load_events, Event};
use evsplat::image_io::save_signed;
use evsplat::motion::MotionState;
use evsplat::tracker::{track_sequence, SequenceOptions};
use evsplat::trajectory::Trajectory;
use nalgebra::Vector3;

use crate::common::{apply_globals, create_dir, init_threads, load_map};
use crate::{GlobalArgs, Outcome};

/// Ground-truth association tolerance when reporting ATE, seconds.
const ATE_TOLERANCE: f64 = 0.01;
/// Half-width of the central difference for ground-truth velocities.
const VELOCITY_STEP: f64 = 1e-3;

#[derive(Args, Debug, Clone, Default)]
pub struct TrackArgs {
    /// 3DGS PLY map.
    #[arg(long)]
    map: Option<PathBuf>,
    /// Event text file, optionally gzip compressed.
    #[arg(long)]
    events: Option<PathBuf>,
    /// TUM ground truth: initial pose and ATE report.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// Initial camera-to-world pose `tx ty tz qx qy qz qw`, instead of the
    /// ground truth.
    #[arg(long, allow_hyphen_values = true)]
    initial_pose: Option<String>,
    /// Seed the first keyframe's velocity from the ground truth.
    #[arg(long)]
    init_velocity_from_gt: bool,
    /// Stop after this many keyframes.
    #[arg(long)]
    max_keyframes: Option<usize>,
    /// Track only the leading fraction of the stream's duration, in (0, 1].
    #[arg(long)]
    sequence_fraction: Option<f64>,
    #[arg(long)]
    events_per_keyframe: Option<usize>,
    /// Skip the polarity-free coarse stage.
    #[arg(long)]
    no_coarse: bool,
    /// Write event and rendered change images per keyframe.
    #[arg(long)]
    dump_images: bool,
}

fn apply(cfg: &mut RunConfig, a: &TrackArgs) {
    if let Some(p) = &a.map {
        cfg.paths.map = Some(p.clone());
    }
    if let Some(p) = &a.events {
        cfg.paths.events = Some(p.clone());
    }
    if let Some(p) = &a.ground_truth {
        cfg.paths.ground_truth = Some(p.clone());
    }
    if let Some(n) = a.events_per_keyframe {
        cfg.frontend.events_per_keyframe = n;
    }
    if a.init_velocity_from_gt {
        cfg.initial.velocity_from_ground_truth = true;
    }
    if a.no_coarse {
        cfg.tracker.coarse_stage = false;
    }
}

/// Events up to `fraction` of the stream's duration.
pub fn leading_fraction(events: &[Event], fraction: f64) -> Result<&[Event]> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        bail!("--sequence-fraction must lie in (0, 1], got {fraction}");
    }
    let (Some(first), Some(last)) = (events.first(), events.last()) else {
        return Ok(events);
    };
    let end = first.t + fraction * (last.t - first.t);
    Ok(&events[..events.partition_point(|e| e.t <= end)])
}

fn initial_state(cfg: &RunConfig, a: &TrackArgs, gt: Option<&Trajectory>, t0: f64) -> Result<MotionState> {
    let pose = if let Some(text) = &a.initial_pose {
        let traj = read_tum(Cursor::new(format!("{t0} {text}")), Path::new("--initial-pose"))?;
        traj.first().context("--initial-pose is empty")?.pose
    } else if let Some(gt) = gt {
        match gt.interpolate(t0) {
            Some(p) => p,
            None => gt.first().context("ground truth is empty")?.pose,
        }
    } else {
        bail!("no initial pose: give --initial-pose or a ground-truth trajectory");
    };
    if cfg.initial.velocity_from_ground_truth {
        let gt = gt.context("velocity from ground truth requested without a ground truth")?;
        let t = t0.clamp(gt.first().map_or(t0, |s| s.t), gt.last().map_or(t0, |s| s.t));
        let s = gt.motion_state_at(t, VELOCITY_STEP).context("ground truth does not cover the stream start")?;
        return Ok(MotionState::new(pose, s.velocity, s.angular_velocity));
    }
    Ok(MotionState::new(
        pose,
        Vector3::from(cfg.initial.velocity),
        Vector3::from(cfg.initial.angular_velocity),
    ))
}

pub fn run(global: &GlobalArgs, a: &TrackArgs) -> Result<Outcome> {
    let mut cfg = match &global.config {
        Some(_) => crate::common::load_config(global)?,
        None => bail!("--config is required for track"),
    };
    apply(&mut cfg, a);
    apply_globals(&mut cfg, global);
    cfg.validate()?;
    init_threads(cfg.threads)?;

    let map = load_map(&cfg)?;
    let events_path = cfg.input(Input::Events)?;
    let all_events = load_events(events_path, cfg.camera.width, cfg.camera.height)?;
    let events = match a.sequence_fraction {
        Some(f) => leading_fraction(&all_events, f)?,
        None => &all_events[..],
    };
    let gt = match cfg.paths.ground_truth {
        Some(_) => Some(load_tum(cfg.input(Input::GroundTruth)?)?),
        None => None,
    };
    let t0 = events.first().map_or(0.0, |e| e.t);
    let initial = initial_state(&cfg, a, gt.as_ref(), t0)?;
    log::info!("{} gaussians, {} events, starting at t = {t0}", map.len(), events.len());

    let out_dir = cfg.paths.output.clone();
    create_dir(&out_dir)?;
    let image_dir = out_dir.join("images");
    if a.dump_images {
        create_dir(&image_dir)?;
    }
    let diag_path = out_dir.join("diagnostics.jsonl");
    let mut diag_file =
        BufWriter::new(File::create(&diag_path).with_context(|| format!("creating {}", diag_path.display()))?);
    let mut sink_error: Option<anyhow::Error> = None;

    let output = track_sequence(
        &map,
        &cfg.camera,
        &cfg.tracker,
        &cfg.frontend(),
        initial,
        t0,
        events,
        SequenceOptions {
            max_keyframes: a.max_keyframes,
        },
        |kf, result| {
            if sink_error.is_some() {
                return;
            }
            let d = &result.diagnostics;
            log::info!(
                "keyframe {} at {:.4} s: loss {:.5} -> {:.5}{}",
                d.index,
                d.tau,
                d.predicted_loss,
                d.stages.last().map_or(d.predicted_loss, |s| s.final_loss),
                if d.divergent { " (divergent)" } else { "" }
            );
            let written = serde_json::to_writer(&mut diag_file, d)
                .map_err(anyhow::Error::from)
                .and_then(|_| diag_file.write_all(b"\n").map_err(anyhow::Error::from));
            if let Err(e) = written {
                sink_error = Some(e.context(format!("writing {}", diag_path.display())));
                return;
            }
            if a.dump_images {
                let stem = image_dir.join(format!("kf_{:05}", d.index));
                let dump = || -> Result<()> {
                    save_signed(&stem.with_extension("events.png"), &kf.delta_ie)?;
                    if let Some(r) = &result.delta_ir {
                        save_signed(&stem.with_extension("rendered.png"), r)?;
                    }
                    Ok(())
                };
                if let Err(e) = dump() {
                    sink_error = Some(e);
                }
            }
        },
    )?;
    if let Some(e) = sink_error {
        return Err(e);
    }
    diag_file.flush().with_context(|| format!("writing {}", diag_path.display()))?;
    let traj_path = out_dir.join("trajectory.txt");
    save_tum(&output.trajectory, &traj_path)?;

    let divergent = output.diagnostics.iter().filter(|d| d.divergent).count();
    let skipped = output.diagnostics.iter().filter(|d| d.skipped).count();
    println!("keyframes: {}", output.trajectory.len());
    println!("divergent: {divergent}");
    println!("skipped: {skipped}");
    println!("trajectory: {}", traj_path.display());
    if let (Some(gt), false) = (&gt, output.trajectory.is_empty()) {
        match align_first_pose(&output.trajectory, gt, ATE_TOLERANCE).and_then(|e| ate(&e, gt, ATE_TOLERANCE)) {
            Ok(r) => println!("{r}"),
            Err(e) => log::warn!("no ATE against the ground truth: {e}"),
        }
    }
    Ok(if output.any_divergent() { Outcome::Diverged } else { Outcome::Success })
}
