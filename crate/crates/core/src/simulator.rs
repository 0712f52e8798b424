//! Synthetic event streams rendered from a splat map along a trajectory.
//!
//! Frames are rendered at a fixed rate. Each pixel keeps the log intensity at
//! which it last fired; whenever the newly rendered value is `k` thresholds
//! away, `k` events fire, timed by linear interpolation between the two
//! frames.

use nalgebra::{Isometry3, Translation3, Vector3};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::events::Event;
use crate::gaussian_map::GaussianMap;
use crate::motion::{so3_exp, Pose};
use crate::rasterizer::{render, CameraIntrinsics, RasterSettings};
use crate::trajectory::{PoseSample, Trajectory};
use crate::{Error, Result};

/// Slack on the threshold count so exact multiples of `C` are not lost to
/// rounding.
const COUNT_SLACK: f64 = 1e-9;

fn default_frame_rate() -> f64 {
    1000.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Log-intensity change per event.
    pub contrast_threshold: f64,
    /// Render rate in Hz.
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
    /// Gaussian timestamp jitter in seconds.
    #[serde(default)]
    pub timestamp_jitter: f64,
    /// Spurious events per pixel per second.
    #[serde(default)]
    pub spurious_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub raster: RasterSettings,
}

impl SimConfig {
    pub fn new(contrast_threshold: f64, frame_rate: f64) -> Self {
        Self {
            contrast_threshold,
            frame_rate,
            timestamp_jitter: 0.0,
            spurious_rate: 0.0,
            seed: 0,
            raster: RasterSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.contrast_threshold > 0.0) {
            return Err(Error::Config("contrast threshold must be positive".into()));
        }
        if !(self.frame_rate > 0.0) {
            return Err(Error::Config("frame rate must be positive".into()));
        }
        if !(self.timestamp_jitter >= 0.0) || !(self.spurious_rate >= 0.0) {
            return Err(Error::Config("noise parameters must be non-negative".into()));
        }
        Ok(())
    }
}

/// Parametric camera motions. The camera looks along world `+z` at rest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrajectoryKind {
    /// Constant-velocity translation of the camera center.
    Line {
        #[serde(default)]
        start: [f64; 3],
        velocity: [f64; 3],
        /// Angular velocity of the camera, rad/s, world frame.
        #[serde(default)]
        angular_velocity: [f64; 3],
    },
    /// Camera center on a circle in the plane `z = center.z`.
    Orbit {
        #[serde(default)]
        center: [f64; 3],
        radius: f64,
        /// Angular rate in rad/s.
        rate: f64,
    },
    /// Band-limited random motion around `center`: a sum of sinusoids per
    /// degree of freedom with frequencies up to `max_frequency`.
    Shake {
        #[serde(default)]
        center: [f64; 3],
        /// Peak translation per axis, meters.
        translation_amplitude: f64,
        /// Peak rotation per axis, radians.
        rotation_amplitude: f64,
        max_frequency: f64,
        seed: u64,
    },
}

const SHAKE_COMPONENTS: usize = 4;

/// Sample a trajectory at `rate` Hz over `[0, duration]`.
pub fn make_trajectory(kind: &TrajectoryKind, duration: f64, rate: f64) -> Result<Trajectory> {
    if !(duration >= 0.0) || !(rate > 0.0) {
        return Err(Error::Config("duration must be non-negative and rate positive".into()));
    }
    let camera_at: Box<dyn Fn(f64) -> (Vector3<f64>, Vector3<f64>)> = match kind {
        TrajectoryKind::Line {
            start,
            velocity,
            angular_velocity,
        } => {
            let (s, v, w) = (Vector3::from(*start), Vector3::from(*velocity), Vector3::from(*angular_velocity));
            Box::new(move |t| (s + v * t, w * t))
        }
        TrajectoryKind::Orbit { center, radius, rate } => {
            if !(*radius >= 0.0) {
                return Err(Error::Config("orbit radius must be non-negative".into()));
            }
            let (c, r, w) = (Vector3::from(*center), *radius, *rate);
            Box::new(move |t| (c + Vector3::new(r * (w * t).cos(), r * (w * t).sin(), 0.0), Vector3::zeros()))
        }
        TrajectoryKind::Shake {
            center,
            translation_amplitude,
            rotation_amplitude,
            max_frequency,
            seed,
        } => {
            if !(*max_frequency > 0.0) || !(*translation_amplitude >= 0.0) || !(*rotation_amplitude >= 0.0) {
                return Err(Error::Config("shake needs positive frequency and non-negative amplitudes".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            // (frequency, phase, weight) per component, six degrees of freedom.
            let comps: Vec<Vec<(f64, f64, f64)>> = (0..6)
                .map(|_| {
                    let raw: Vec<(f64, f64, f64)> = (0..SHAKE_COMPONENTS)
                        .map(|_| {
                            (
                                rng.random_range(0.2..1.0) * max_frequency,
                                rng.random_range(0.0..std::f64::consts::TAU),
                                rng.random_range(0.5..1.0),
                            )
                        })
                        .collect();
                    let total: f64 = raw.iter().map(|c| c.2).sum();
                    raw.into_iter().map(|(f, p, w)| (f, p, w / total)).collect()
                })
                .collect();
            let c = Vector3::from(*center);
            let (ta, ra) = (*translation_amplitude, *rotation_amplitude);
            Box::new(move |t| {
                let dof = |k: usize| -> f64 {
                    comps[k]
                        .iter()
                        .map(|(f, p, w)| w * ((std::f64::consts::TAU * f * t + p).sin() - p.sin()))
                        .sum()
                };
                let offset = Vector3::new(dof(0), dof(1), dof(2)) * ta;
                let rot = Vector3::new(dof(3), dof(4), dof(5)) * ra;
                (c + offset, rot)
            })
        }
    };
    let n = (duration * rate + COUNT_SLACK).floor() as usize;
    let samples = (0..=n)
        .map(|i| {
            let t = i as f64 / rate;
            let (center, phi) = camera_at(t);
            let twc = Isometry3::from_parts(Translation3::from(center), so3_exp(&phi));
            PoseSample::new(t, twc.inverse())
        })
        .collect();
    Trajectory::from_samples(samples)
}

/// Simulator output.
#[derive(Clone, Debug)]
pub struct SimOutput {
    pub events: Vec<Event>,
    /// Times of the rendered frames.
    pub frame_times: Vec<f64>,
    /// Log-intensity frames, kept only when requested.
    pub frames: Option<Vec<Array2<f64>>>,
}

/// Emit threshold crossings for one pixel between two rendered frames.
///
/// `reference` is the level at which the pixel last fired and is updated
/// in place. Events are appended to `out` in time order.
#[allow(clippy::too_many_arguments)]
pub fn pixel_crossings(
    prev: f64,
    next: f64,
    reference: &mut f64,
    t0: f64,
    t1: f64,
    threshold: f64,
    x: u32,
    y: u32,
    out: &mut Vec<Event>,
) {
    let diff = next - *reference;
    let count = (diff.abs() / threshold + COUNT_SLACK).floor() as usize;
    if count == 0 {
        return;
    }
    let sign = diff.signum();
    let ramp = next - prev;
    for k in 1..=count {
        let level = *reference + sign * threshold * k as f64;
        let u = if ramp != 0.0 { ((level - prev) / ramp).clamp(0.0, 1.0) } else { 1.0 };
        out.push(Event::new(t0 + u * (t1 - t0), x, y, sign as i8));
    }
    *reference += sign * threshold * count as f64;
}

/// Render the map along `traj` at `cfg.frame_rate` and emit events.
pub fn simulate_events(
    map: &GaussianMap,
    traj: &Trajectory,
    intr: &CameraIntrinsics,
    cfg: &SimConfig,
    keep_frames: bool,
) -> Result<SimOutput> {
    cfg.validate()?;
    if map.is_empty() {
        return Err(Error::EmptyMap);
    }
    let (start, end) = match (traj.first(), traj.last()) {
        (Some(a), Some(b)) => (a.t, b.t),
        _ => return Err(Error::Contract("trajectory is empty".into())),
    };
    let n_frames = ((end - start) * cfg.frame_rate + COUNT_SLACK).floor() as usize + 1;
    if n_frames < 2 {
        return Err(Error::Contract("trajectory spans fewer than two frames".into()));
    }
    let frame_times: Vec<f64> = (0..n_frames).map(|k| start + k as f64 / cfg.frame_rate).collect();

    let render_at = |t: f64| -> Result<Array2<f64>> {
        let pose: Pose = traj
            .interpolate(t.min(end))
            .ok_or_else(|| Error::Contract(format!("no pose at t = {t}")))?;
        Ok(render(map, &pose, intr, &cfg.raster)?.log_intensity)
    };

    let mut prev = render_at(frame_times[0])?;
    let mut reference = prev.clone();
    let mut frames = keep_frames.then(|| vec![prev.clone()]);
    let mut events = Vec::new();
    let mut frame_events = Vec::new();
    for k in 1..n_frames {
        let next = render_at(frame_times[k])?;
        frame_events.clear();
        for ((y, x), r) in reference.indexed_iter_mut() {
            pixel_crossings(
                prev[(y, x)],
                next[(y, x)],
                r,
                frame_times[k - 1],
                frame_times[k],
                cfg.contrast_threshold,
                x as u32,
                y as u32,
                &mut frame_events,
            );
        }
        // Stable, so simultaneous events keep pixel order.
        frame_events.sort_by(|a, b| a.t.total_cmp(&b.t));
        events.extend_from_slice(&frame_events);
        if let Some(f) = frames.as_mut() {
            f.push(next.clone());
        }
        prev = next;
    }

    apply_noise(&mut events, cfg, intr, start, frame_times[n_frames - 1]);
    Ok(SimOutput {
        events,
        frame_times,
        frames,
    })
}

fn apply_noise(events: &mut Vec<Event>, cfg: &SimConfig, intr: &CameraIntrinsics, start: f64, end: f64) {
    if cfg.timestamp_jitter == 0.0 && cfg.spurious_rate == 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    if cfg.timestamp_jitter > 0.0 {
        let jitter = Normal::new(0.0, cfg.timestamp_jitter).expect("validated jitter");
        for e in events.iter_mut() {
            e.t = (e.t + jitter.sample(&mut rng)).clamp(start, end);
        }
    }
    let expected = cfg.spurious_rate * (end - start) * intr.pixel_count() as f64;
    if expected > 0.0 {
        let count = Poisson::new(expected).map(|p| p.sample(&mut rng) as usize).unwrap_or(0);
        for _ in 0..count {
            events.push(Event::new(
                rng.random_range(start..=end),
                rng.random_range(0..intr.width as u32),
                rng.random_range(0..intr.height as u32),
                if rng.random_bool(0.5) { 1 } else { -1 },
            ));
        }
    }
    events.sort_by(|a, b| a.t.total_cmp(&b.t));
}
