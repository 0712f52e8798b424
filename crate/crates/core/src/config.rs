//! Run configuration read from a sectioned TOML file.
//!
//! ```toml
//! seed = 7
//! threads = 1
//!
//! [paths]
//! map = "map.ply"
//! events = "events.txt"
//! ground_truth = "groundtruth.txt"
//! output = "out"
//!
//! [camera]
//! fx = 100.0
//! fy = 100.0
//! cx = 63.5
//! cy = 47.5
//! width = 128
//! height = 96
//!
//! [frontend]
//! events_per_keyframe = 15000
//!
//! [tracker]
//! pyramid_levels = 3
//!
//! [simulation]
//! contrast_threshold = 0.15
//! duration = 3.0
//! [simulation.trajectory]
//! kind = "shake"
//! translation_amplitude = 0.3
//! rotation_amplitude = 0.1
//! max_frequency = 1.0
//! seed = 7
//!
//! [scene]
//! kind = "wall"
//! nx = 48
//! ny = 40
//! spacing = 0.09
//! depth = 2.0
//! seed = 3
//! ```
//!
//! Relative paths are resolved against the directory of the config file.
//! Every section except `[camera]` is optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::events::FrontendConfig;
use crate::gaussian_map::synthetic::SceneDescriptor;
use crate::rasterizer::CameraIntrinsics;
use crate::simulator::{SimConfig, TrajectoryKind};
use crate::tracker::TrackerConfig;
use crate::{Error, Result};

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_threads() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// 3DGS PLY map. When absent the `[scene]` descriptor is used.
    #[serde(default)]
    pub map: Option<PathBuf>,
    #[serde(default)]
    pub events: Option<PathBuf>,
    /// TUM ground truth, used for the initial pose and for evaluation.
    #[serde(default)]
    pub ground_truth: Option<PathBuf>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            map: None,
            events: None,
            ground_truth: None,
            output: default_output(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontendSection {
    #[serde(default = "default_events_per_keyframe")]
    pub events_per_keyframe: usize,
}

fn default_events_per_keyframe() -> usize {
    15_000
}

impl Default for FrontendSection {
    fn default() -> Self {
        Self {
            events_per_keyframe: default_events_per_keyframe(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationSection {
    /// Trajectory length in seconds.
    pub duration: f64,
    pub trajectory: TrajectoryKind,
    #[serde(flatten)]
    pub sim: SimConfig,
}

/// Starting dynamics of the first keyframe. Velocities are in the camera
/// frame; zero unless given or taken from the ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    #[serde(default)]
    pub velocity: [f64; 3],
    #[serde(default)]
    pub angular_velocity: [f64; 3],
    /// Differentiate the ground truth around its first timestamp instead.
    #[serde(default)]
    pub velocity_from_ground_truth: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default)]
    pub paths: Paths,
    pub camera: CameraIntrinsics,
    #[serde(default)]
    pub frontend: FrontendSection,
    #[serde(default)]
    pub tracker: TrackerConfig,
    #[serde(default)]
    pub simulation: Option<SimulationSection>,
    #[serde(default)]
    pub scene: Option<SceneDescriptor>,
    #[serde(default)]
    pub initial: InitialSection,
}

/// Inputs a command may require.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Input {
    Map,
    Events,
    GroundTruth,
}

impl Input {
    fn key(self) -> &'static str {
        match self {
            Input::Map => "paths.map",
            Input::Events => "paths.events",
            Input::GroundTruth => "paths.ground_truth",
        }
    }
}

impl RunConfig {
    /// Configuration for a sensor with default sections everywhere else.
    pub fn new(camera: CameraIntrinsics) -> Self {
        Self {
            seed: 0,
            threads: default_threads(),
            paths: Paths::default(),
            camera,
            frontend: FrontendSection::default(),
            tracker: TrackerConfig::default(),
            simulation: None,
            scene: None,
            initial: InitialSection::default(),
        }
    }

    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("{}: {}", source.display(), e.message())))
    }

    /// Read, resolve relative paths and validate.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text, path)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new("")));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Make relative paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.paths.map, &mut self.paths.events, &mut self.paths.ground_truth]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        fix(&mut self.paths.output);
    }

    pub fn frontend(&self) -> FrontendConfig {
        FrontendConfig::new(self.frontend.events_per_keyframe, self.camera.width, self.camera.height)
    }

    /// Check every section. Input paths are checked by [`RunConfig::input`]
    /// since each command needs a different subset.
    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        self.frontend().validate()?;
        self.tracker.validate()?;
        if let Some(s) = &self.simulation {
            s.sim.validate()?;
            if !(s.duration > 0.0) {
                return Err(Error::Config("simulation duration must be positive".into()));
            }
        }
        if self.paths.output.exists() && !self.paths.output.is_dir() {
            return Err(Error::Config(format!(
                "output {} exists and is not a directory",
                self.paths.output.display()
            )));
        }
        Ok(())
    }

    /// Path of a required input, which must exist.
    pub fn input(&self, which: Input) -> Result<&Path> {
        let p = match which {
            Input::Map => &self.paths.map,
            Input::Events => &self.paths.events,
            Input::GroundTruth => &self.paths.ground_truth,
        };
        let p = p
            .as_deref()
            .ok_or_else(|| Error::Config(format!("{} is not set", which.key())))?;
        if !p.is_file() {
            return Err(Error::Config(format!("{} {} does not exist", which.key(), p.display())));
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[camera]\nfx = 100.0\nfy = 100.0\ncx = 63.5\ncy = 47.5\nwidth = 128\nheight = 96\n";

    #[test]
    fn minimal_config_takes_defaults() {
        let c = RunConfig::parse(MINIMAL, Path::new("x.toml")).unwrap();
        assert_eq!(c.threads, 1);
        assert_eq!(c.frontend.events_per_keyframe, 15_000);
        assert_eq!(c.tracker, TrackerConfig::default());
        assert_eq!(c.paths.output, PathBuf::from("out"));
        assert!(c.simulation.is_none() && c.scene.is_none());
        assert_eq!(c.frontend(), FrontendConfig::new(15_000, 128, 96));
        c.validate().unwrap();
    }

    #[test]
    fn full_config_round_trips() {
        let text = format!(
            "seed = 4\nthreads = 2\n[paths]\nmap = \"m.ply\"\n{MINIMAL}[tracker]\npyramid_levels = 2\n\
             [simulation]\nduration = 2.0\ncontrast_threshold = 0.2\n[simulation.trajectory]\nkind = \"orbit\"\nradius = 0.1\nrate = 1.0\n\
             [scene]\nkind = \"wall\"\nnx = 4\nny = 3\nspacing = 0.1\ndepth = 2.0\nseed = 1\n\
             [initial]\nvelocity = [0.1, 0.0, 0.0]\n"
        );
        let c = RunConfig::parse(&text, Path::new("x.toml")).unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.tracker.pyramid_levels, 2);
        let sim = c.simulation.as_ref().unwrap();
        assert_eq!(sim.sim.contrast_threshold, 0.2);
        assert_eq!(sim.sim.frame_rate, 1000.0);
        assert!(matches!(sim.trajectory, TrajectoryKind::Orbit { .. }));
        assert!(matches!(c.scene, Some(SceneDescriptor::Wall { .. })));
        assert_eq!(c.initial.velocity, [0.1, 0.0, 0.0]);
        let again = RunConfig::parse(&c.to_toml().unwrap(), Path::new("y.toml")).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let e = RunConfig::parse(&format!("{MINIMAL}[paths]\nmapp = \"a\"\n"), Path::new("x.toml")).unwrap_err();
        assert!(e.to_string().contains("mapp"), "{e}");
        let mut c = RunConfig::parse(MINIMAL, Path::new("x.toml")).unwrap();
        c.frontend.events_per_keyframe = 0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::parse(MINIMAL, Path::new("x.toml")).unwrap();
        c.camera.fx = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("map.ply"), b"").unwrap();
        let cfg_path = dir.path().join("run.toml");
        std::fs::write(&cfg_path, format!("[paths]\nmap = \"map.ply\"\nevents = \"missing.txt\"\n{MINIMAL}")).unwrap();
        let c = RunConfig::load(&cfg_path).unwrap();
        assert_eq!(c.input(Input::Map).unwrap(), dir.path().join("map.ply"));
        assert_eq!(c.paths.output, dir.path().join("out"));
        let e = c.input(Input::Events).unwrap_err().to_string();
        assert!(e.contains("missing.txt"), "{e}");
        let e = c.input(Input::GroundTruth).unwrap_err().to_string();
        assert!(e.contains("paths.ground_truth"), "{e}");
    }
}
