//! Config loading, flag overrides and shared plumbing.

use std::path::Path;

use anyhow::{bail, Context, Result};
use evsplat::config::{Input, RunConfig};
use evsplat::gaussian_map::{load_ply, make_synthetic_map, GaussianMap};

use crate::GlobalArgs;

/// Load `--config` and apply the global flag overrides.
pub fn load_config(global: &GlobalArgs) -> Result<RunConfig> {
    let Some(path) = &global.config else {
        bail!("--config is required for this command");
    };
    let mut cfg = RunConfig::load(path)?;
    apply_globals(&mut cfg, global);
    cfg.validate()?;
    Ok(cfg)
}

pub fn apply_globals(cfg: &mut RunConfig, global: &GlobalArgs) {
    if let Some(t) = global.threads {
        cfg.threads = t;
    }
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    if let Some(o) = &global.output {
        cfg.paths.output = o.clone();
    }
}

/// Size the global worker pool. Results do not depend on the thread count;
/// one thread also fixes the order of every log line.
pub fn init_threads(threads: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring the worker pool")
}

/// The PLY map when `paths.map` is set, otherwise the `[scene]` descriptor.
pub fn load_map(cfg: &RunConfig) -> Result<GaussianMap> {
    if cfg.paths.map.is_some() {
        let path = cfg.input(Input::Map)?;
        return load_ply(path).with_context(|| format!("loading map {}", path.display()));
    }
    match &cfg.scene {
        Some(scene) => Ok(make_synthetic_map(scene)?),
        None => bail!("no map: set paths.map or a [scene] section"),
    }
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}
