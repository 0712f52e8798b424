//! `render`: one view of the map, for eyeballing poses and scenes.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use evsplat::config::RunConfig;
use evsplat::evaluation::read_tum;
use evsplat::gaussian_map::load_ply;
use evsplat::image_io::{intensity_to_gray, save_gray_png, save_pgm, save_rgb_png};
use evsplat::motion::Pose;
use evsplat::rasterizer::{render, CameraIntrinsics, RasterSettings};

use crate::common::{apply_globals, create_dir, init_threads, load_config, load_map};
use crate::{GlobalArgs, Outcome};

#[derive(Args, Debug, Clone)]
pub struct RenderArgs {
    /// 3DGS PLY map; overrides the config.
    #[arg(long)]
    map: Option<PathBuf>,
    /// Camera-to-world pose `tx ty tz qx qy qz qw`; identity by default.
    #[arg(long, allow_hyphen_values = true)]
    pose: Option<String>,
    /// Image path. `.pgm` writes gray intensity; anything else a color PNG.
    /// Defaults to `render.png` in the output directory.
    #[arg(long)]
    image: Option<PathBuf>,
    /// Gray intensity instead of color.
    #[arg(long)]
    gray: bool,
    /// Focal length in pixels when no config is given.
    #[arg(long, default_value_t = 100.0)]
    focal: f64,
    #[arg(long, default_value_t = 128)]
    width: usize,
    #[arg(long, default_value_t = 96)]
    height: usize,
}

fn parse_pose(text: &str) -> Result<Pose> {
    let traj = read_tum(Cursor::new(format!("0 {text}")), Path::new("--pose"))?;
    Ok(traj.first().context("--pose is empty")?.pose)
}

pub fn run(global: &GlobalArgs, a: &RenderArgs) -> Result<Outcome> {
    let mut cfg = match &global.config {
        Some(_) => load_config(global)?,
        None => {
            let mut c = RunConfig::new(CameraIntrinsics::centered(a.focal, a.width, a.height));
            apply_globals(&mut c, global);
            c.validate()?;
            c
        }
    };
    if let Some(m) = &a.map {
        cfg.paths.map = Some(m.clone());
    }
    init_threads(cfg.threads)?;
    let map = match &cfg.paths.map {
        Some(p) if global.config.is_none() => load_ply(p).with_context(|| format!("loading map {}", p.display()))?,
        Some(_) => load_map(&cfg)?,
        None if cfg.scene.is_some() => load_map(&cfg)?,
        None => bail!("no map: give --map or a config with paths.map or [scene]"),
    };
    let pose = match &a.pose {
        Some(text) => parse_pose(text)?,
        None => Pose::identity(),
    };
    let img = render(&map, &pose, &cfg.camera, &RasterSettings::default())?;

    let path = match &a.image {
        Some(p) => p.clone(),
        None => {
            create_dir(&cfg.paths.output)?;
            cfg.paths.output.join("render.png")
        }
    };
    let (w, h) = (cfg.camera.width, cfg.camera.height);
    if path.extension().is_some_and(|e| e == "pgm") {
        save_pgm(&path, w, h, &intensity_to_gray(&img.intensity))?;
    } else if a.gray {
        save_gray_png(&path, w, h, intensity_to_gray(&img.intensity))?;
    } else {
        save_rgb_png(&path, w, h, &img.color)?;
    }
    let covered = img.pixels.iter().filter(|p| p.len > 0).count();
    println!("visible splats: {}", img.splats.len());
    println!("covered pixels: {covered}");
    println!("image: {}", path.display());
    Ok(Outcome::Success)
}
