//! Keyframe-by-keyframe pose and velocity tracking.
//!
//! Each keyframe is registered in two stages. The coarse stage compares
//! polarity-free images `|ΔI_r|` and `|ΔI_e|` over a pyramid, updating only
//! the pose. The fine stage compares signed images at full resolution and
//! updates pose and velocity together. Both stages descend along a
//! limited-memory quasi-Newton direction seeded by per-block learning rates,
//! halve rejected steps, fold the increment into the keyframe pose after
//! every accepted step, and stop on a flat loss slope.

mod image_ops;
mod loss;
pub mod quasi_newton;

use nalgebra::Vector3;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::events::{Event, EventKeyframe, FrontendConfig, KeyframeCursor};
use crate::gaussian_map::GaussianMap;
use crate::jacobians::{full_gradient, CameraDerivatives, Gradient12};
use crate::motion::{Boundary, MotionState, Pose, PoseIncrement};
use crate::rasterizer::{backward, CameraIntrinsics, RasterSettings};
use crate::trajectory::Trajectory;
use crate::{Error, Result};

pub use image_ops::{average_pool, average_pool_adjoint, blur, blur_adjoint, event_mask, max_pool_mask, preprocess};
pub use loss::{
    normalized_loss, render_delta_ir, ChangeKind, DeltaRender, IntensityChangeImage, DEGENERATE_LOSS,
    MIN_NORM,
};

pub const MAX_PYRAMID_LEVELS: usize = 5;
/// Intervals shorter than this carry no velocity information.
const MIN_HALF_INTERVAL: f64 = 1e-9;

/// Characteristic step per parameter block. The optimizer works in
/// coordinates measured in these units, so the first step of a stage is
/// gradient descent preconditioned by their squares. Velocity sizes are
/// displacements over half an interval and are divided by `Δτ/2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub translation: f64,
    pub rotation: f64,
    pub velocity: f64,
    pub angular_velocity: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            translation: 0.01,
            rotation: 0.005,
            velocity: 0.03,
            angular_velocity: 0.015,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub pyramid_levels: usize,
    /// Blur standard deviation in pixels of each pyramid level.
    pub blur_sigma: f64,
    pub mask_dilation: usize,
    /// Minimum `|ΔI_e|` (event count) that seeds the mask.
    pub mask_threshold: f64,
    pub learning_rates: LearningRates,
    /// Iteration cap per pyramid level of the coarse stage.
    pub coarse_max_iters: usize,
    pub fine_max_iters: usize,
    pub slope_window: usize,
    /// Convergence threshold on the mean loss decrease per iteration, as a
    /// fraction of the stage's initial loss.
    pub slope_epsilon: f64,
    /// Relative loss increase tolerated before a step is rejected.
    pub step_tolerance: f64,
    /// Length of the first step of every stage and level, in block units.
    pub initial_step: f64,
    /// Growth of the gradient step length after an accepted step.
    pub step_growth: f64,
    /// Longest step in block units.
    pub max_step: f64,
    /// A stage stops once rejections shrink the step below this length.
    pub min_step: f64,
    /// Step pairs kept for the curvature estimate; 0 gives plain gradient
    /// descent.
    pub memory: usize,
    /// Run the polarity-free stage before the signed one.
    pub coarse_stage: bool,
    pub raster: RasterSettings,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            pyramid_levels: 3,
            blur_sigma: 1.5,
            mask_dilation: 4,
            mask_threshold: 1.0,
            learning_rates: LearningRates::default(),
            coarse_max_iters: 30,
            fine_max_iters: 60,
            slope_window: 5,
            slope_epsilon: 1e-4,
            step_tolerance: 0.0,
            initial_step: 0.5,
            step_growth: 1.5,
            max_step: 2.0,
            min_step: 1e-3,
            memory: 6,
            coarse_stage: true,
            raster: RasterSettings::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.pyramid_levels == 0 || self.pyramid_levels > MAX_PYRAMID_LEVELS {
            return bad("pyramid_levels must be between 1 and 5");
        }
        if !(self.blur_sigma >= 0.0) {
            return bad("blur_sigma must be non-negative");
        }
        if !(self.mask_threshold > 0.0) {
            return bad("mask_threshold must be positive");
        }
        let lr = &self.learning_rates;
        if ![lr.translation, lr.rotation, lr.velocity, lr.angular_velocity].iter().all(|&v| v > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.fine_max_iters == 0 || self.coarse_max_iters == 0 {
            return bad("iteration caps must be positive");
        }
        if self.slope_window == 0 || !(self.slope_epsilon > 0.0) {
            return bad("slope_window and slope_epsilon must be positive");
        }
        if !(self.step_tolerance >= 0.0) || !(self.step_growth >= 1.0) {
            return bad("step_tolerance must be non-negative and step_growth at least 1");
        }
        if !(self.min_step > 0.0) || !(self.initial_step >= self.min_step) || !(self.max_step >= self.initial_step) {
            return bad("step lengths must satisfy 0 < min_step <= initial_step <= max_step");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Coarse,
    Fine,
}

/// Outcome of one stage at one pyramid level.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageReport {
    pub stage: Stage,
    pub level: usize,
    pub iterations: usize,
    pub accepted: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub converged: bool,
    /// Loss after every accepted step, starting with the initial loss.
    pub losses: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KeyframeDiagnostics {
    pub index: usize,
    pub tau: f64,
    pub delta_tau: f64,
    pub events: usize,
    /// No event passed the mask threshold; the prediction was emitted.
    pub skipped: bool,
    /// The fine loss ended above the loss at the prediction; the prediction
    /// was emitted.
    pub divergent: bool,
    pub predicted_loss: f64,
    pub stages: Vec<StageReport>,
    pub velocity: [f64; 3],
    pub angular_velocity: [f64; 3],
}

#[derive(Clone, Debug)]
pub struct KeyframeResult {
    /// State carried to the next keyframe.
    pub state: MotionState,
    pub diagnostics: KeyframeDiagnostics,
    /// Final signed `ΔI_r` at full resolution (absent for skipped frames).
    pub delta_ir: Option<Array2<f64>>,
}

#[derive(Clone, Debug, Default)]
pub struct TrackingOutput {
    pub trajectory: Trajectory,
    pub diagnostics: Vec<KeyframeDiagnostics>,
}

impl TrackingOutput {
    pub fn any_divergent(&self) -> bool {
        self.diagnostics.iter().any(|d| d.divergent)
    }
}

/// Event-side data for one pyramid level.
struct Target {
    level: usize,
    events: Array2<f64>,
    mask: Array2<bool>,
}

struct Evaluation {
    loss: f64,
    delta: DeltaRender,
    /// `∂L/∂ΔI_r` at full resolution.
    pixel_grad: Array2<f64>,
}

/// Per-keyframe optimizer bound to a map and camera.
#[derive(Clone, Debug)]
pub struct Tracker<'a> {
    map: &'a GaussianMap,
    intr: CameraIntrinsics,
    cfg: TrackerConfig,
}

impl<'a> Tracker<'a> {
    pub fn new(map: &'a GaussianMap, intr: CameraIntrinsics, cfg: TrackerConfig) -> Result<Self> {
        cfg.validate()?;
        intr.validate()?;
        if map.is_empty() {
            return Err(Error::EmptyMap);
        }
        let coarsest = intr.at_level(cfg.pyramid_levels - 1);
        if coarsest.width == 0 || coarsest.height == 0 {
            return Err(Error::Config(format!(
                "{} pyramid levels are too many for a {}x{} sensor",
                cfg.pyramid_levels, intr.width, intr.height
            )));
        }
        Ok(Self { map, intr, cfg })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    fn target(&self, kf: &EventKeyframe, stage: Stage, level: usize) -> Target {
        let source = match stage {
            Stage::Coarse => kf.delta_ie.mapv(f64::abs),
            Stage::Fine => kf.delta_ie.clone(),
        };
        let full_mask = event_mask(&kf.delta_ie, self.cfg.mask_threshold, self.cfg.mask_dilation);
        Target {
            level,
            events: preprocess(&source, level, self.cfg.blur_sigma),
            mask: max_pool_mask(&full_mask, level),
        }
    }

    fn evaluate(&self, state: &MotionState, kf: &EventKeyframe, target: &Target, stage: Stage) -> Result<Evaluation> {
        // Both sides go through the same pool-then-blur pipeline, so a state
        // that explains the events at full resolution does so at every level.
        let delta = render_delta_ir(
            self.map,
            state,
            &PoseIncrement::zero(),
            kf.tau,
            kf.delta_tau,
            &self.intr,
            &self.cfg.raster,
        )?;
        let raw = &delta.image.values;
        let shaped = match stage {
            Stage::Coarse => raw.mapv(f64::abs),
            Stage::Fine => raw.clone(),
        };
        let rendered = preprocess(&shaped, target.level, self.cfg.blur_sigma);
        let (loss, d_rendered) = normalized_loss(&rendered, &target.events, &target.mask)?;
        let pooled_grad = blur_adjoint(&d_rendered, self.cfg.blur_sigma);
        let mut pixel_grad = average_pool_adjoint(&pooled_grad, target.level, raw.dim());
        if stage == Stage::Coarse {
            // d|x|/dx = sign(x), with 0 at 0.
            ndarray::Zip::from(&mut pixel_grad).and(raw).for_each(|g, &r| {
                *g *= if r > 0.0 {
                    1.0
                } else if r < 0.0 {
                    -1.0
                } else {
                    0.0
                };
            });
        }
        Ok(Evaluation { loss, delta, pixel_grad })
    }

    fn gradient(&self, eval: &Evaluation, kf: &EventKeyframe) -> Result<Gradient12> {
        let neg = eval.pixel_grad.mapv(|g| -g);
        let (gl, gf) = rayon::join(
            || backward(&eval.delta.last, &eval.pixel_grad),
            || backward(&eval.delta.first, &neg),
        );
        let (gl, gf) = (gl?, gf?);
        let means = || self.map.gaussians().iter().map(|g| &g.mean);
        let dl = CameraDerivatives::new(&eval.delta.last_factors, means(), kf.delta_tau, Boundary::Last);
        let df = CameraDerivatives::new(&eval.delta.first_factors, means(), kf.delta_tau, Boundary::First);
        full_gradient(&[(&gl, &dl), (&gf, &df)])
    }

    /// Block units for a stage; velocity is frozen in the coarse stage.
    fn units(&self, stage: Stage, delta_tau: f64) -> [f64; 4] {
        let lr = &self.cfg.learning_rates;
        let s = 0.5 * delta_tau;
        let with_velocity = stage == Stage::Fine && s > MIN_HALF_INTERVAL;
        [
            lr.translation,
            lr.rotation,
            if with_velocity { lr.velocity / s } else { 0.0 },
            if with_velocity { lr.angular_velocity / s } else { 0.0 },
        ]
    }

    /// Gradient in unit-scaled coordinates.
    fn scaled(g: &Gradient12, units: &[f64; 4]) -> Gradient12 {
        Gradient12::from_fn(|i, _| g[i] * units[i / 3])
    }

    /// Apply a step given in unit-scaled coordinates.
    fn step(state: &MotionState, z: &Gradient12, units: &[f64; 4]) -> MotionState {
        let d = |b: usize| Vector3::new(z[3 * b], z[3 * b + 1], z[3 * b + 2]) * units[b];
        let mut next = state.apply_increment(&PoseIncrement::new(d(0), d(1)));
        next.velocity += d(2);
        next.angular_velocity += d(3);
        next
    }

    fn converged(&self, losses: &[f64], initial: f64) -> bool {
        let w = self.cfg.slope_window;
        if losses.len() <= w {
            return false;
        }
        let n = losses.len();
        let slope = (losses[n - 1 - w] - losses[n - 1]) / w as f64;
        slope < self.cfg.slope_epsilon * initial
    }

    fn optimize(
        &self,
        state: MotionState,
        kf: &EventKeyframe,
        stage: Stage,
        level: usize,
    ) -> Result<(MotionState, StageReport, Evaluation)> {
        let target = self.target(kf, stage, level);
        let max_iters = match stage {
            Stage::Coarse => self.cfg.coarse_max_iters,
            Stage::Fine => self.cfg.fine_max_iters,
        };
        let mut state = state;
        let mut eval = self.evaluate(&state, kf, &target, stage)?;
        let initial = eval.loss;
        let mut losses = vec![initial];
        let mut report = StageReport {
            stage,
            level: target.level,
            iterations: 0,
            accepted: 0,
            initial_loss: initial,
            final_loss: initial,
            converged: false,
            losses: Vec::new(),
        };
        let units = self.units(stage, kf.delta_tau);
        let mut z = Self::scaled(&self.gradient(&eval, kf)?, &units);
        let mut memory = quasi_newton::Memory::new(self.cfg.memory);
        let mut length = self.cfg.initial_step;
        'outer: while report.iterations < max_iters {
            if z.iter().all(|&v| v == 0.0) {
                report.converged = true;
                break;
            }
            let mut dir = match memory.direction(&z) {
                Some(d) if d.dot(&z) < 0.0 => d,
                _ => {
                    memory.clear();
                    -z * (length / z.norm())
                }
            };
            let norm = dir.norm();
            if norm > self.cfg.max_step {
                dir *= self.cfg.max_step / norm;
            }
            loop {
                if report.iterations >= max_iters {
                    break 'outer;
                }
                report.iterations += 1;
                let candidate = Self::step(&state, &dir, &units);
                let cand = self.evaluate(&candidate, kf, &target, stage)?;
                if cand.loss <= eval.loss * (1.0 + self.cfg.step_tolerance) {
                    let next_z = Self::scaled(&self.gradient(&cand, kf)?, &units);
                    memory.push(dir, next_z - z);
                    length = (dir.norm() * self.cfg.step_growth).min(self.cfg.max_step);
                    state = candidate;
                    eval = cand;
                    z = next_z;
                    report.accepted += 1;
                    losses.push(eval.loss);
                    if self.converged(&losses, initial) {
                        report.converged = true;
                        break 'outer;
                    }
                    break;
                }
                dir *= 0.5;
                if dir.norm() < self.cfg.min_step {
                    report.converged = true;
                    break 'outer;
                }
            }
        }
        report.final_loss = eval.loss;
        report.losses = losses;
        Ok((state, report, eval))
    }

    /// Polarity-free, pose-only registration from the coarsest level down.
    pub fn coarse_stage(&self, state: MotionState, kf: &EventKeyframe) -> Result<(MotionState, Vec<StageReport>)> {
        let mut state = state;
        let mut reports = Vec::with_capacity(self.cfg.pyramid_levels);
        for level in (0..self.cfg.pyramid_levels).rev() {
            let (next, report, _) = self.optimize(state, kf, Stage::Coarse, level)?;
            state = next;
            reports.push(report);
        }
        Ok((state, reports))
    }

    /// Signed registration of pose and velocity at full resolution.
    pub fn fine_stage(&self, state: MotionState, kf: &EventKeyframe) -> Result<(MotionState, StageReport)> {
        let (state, report, _) = self.optimize(state, kf, Stage::Fine, 0)?;
        Ok((state, report))
    }

    /// Signed full-resolution loss and 12-dim gradient at a state.
    pub fn fine_loss_and_gradient(&self, state: &MotionState, kf: &EventKeyframe) -> Result<(f64, Gradient12)> {
        let target = self.target(kf, Stage::Fine, 0);
        let eval = self.evaluate(state, kf, &target, Stage::Fine)?;
        let g = self.gradient(&eval, kf)?;
        Ok((eval.loss, g))
    }

    /// Loss at a state for either stage and level.
    pub fn loss(&self, state: &MotionState, kf: &EventKeyframe, stage: Stage, level: usize) -> Result<f64> {
        let target = self.target(kf, stage, level);
        Ok(self.evaluate(state, kf, &target, stage)?.loss)
    }

    /// Register one keyframe starting from the constant-velocity prediction.
    pub fn track_keyframe(&self, predicted: MotionState, kf: &EventKeyframe, index: usize) -> Result<KeyframeResult> {
        let mut diag = KeyframeDiagnostics {
            index,
            tau: kf.tau,
            delta_tau: kf.delta_tau,
            events: kf.count,
            skipped: false,
            divergent: false,
            predicted_loss: DEGENERATE_LOSS,
            stages: Vec::new(),
            velocity: predicted.velocity.into(),
            angular_velocity: predicted.angular_velocity.into(),
        };
        let fine_target = self.target(kf, Stage::Fine, 0);
        if !fine_target.mask.iter().any(|&m| m) {
            log::warn!("keyframe {index}: no pixel reaches the mask threshold, skipping");
            diag.skipped = true;
            return Ok(KeyframeResult {
                state: predicted,
                diagnostics: diag,
                delta_ir: None,
            });
        }
        diag.predicted_loss = self.evaluate(&predicted, kf, &fine_target, Stage::Fine)?.loss;

        let mut state = predicted;
        if self.cfg.coarse_stage {
            let (next, reports) = self.coarse_stage(state, kf)?;
            state = next;
            diag.stages.extend(reports);
        }
        let (state, report, eval) = self.optimize(state, kf, Stage::Fine, 0)?;
        let final_loss = report.final_loss;
        diag.stages.push(report);

        let state = if final_loss > diag.predicted_loss {
            log::warn!(
                "keyframe {index}: loss rose from {} to {final_loss}, keeping the prediction",
                diag.predicted_loss
            );
            diag.divergent = true;
            predicted
        } else {
            state
        };
        diag.velocity = state.velocity.into();
        diag.angular_velocity = state.angular_velocity.into();
        Ok(KeyframeResult {
            state,
            diagnostics: diag,
            delta_ir: Some(eval.delta.image.values),
        })
    }
}

/// Options for [`track_sequence`] beyond the tracker configuration.
#[derive(Clone, Copy, Debug, Default)]
pub struct SequenceOptions {
    pub max_keyframes: Option<usize>,
}

/// Track a whole stream. `initial` is the state at time `t0`; every
/// keyframe starts from the constant-velocity prediction of the previous
/// result. `observer` sees every keyframe with its event image.
#[allow(clippy::too_many_arguments)]
pub fn track_sequence(
    map: &GaussianMap,
    intr: &CameraIntrinsics,
    cfg: &TrackerConfig,
    frontend: &FrontendConfig,
    initial: MotionState,
    t0: f64,
    events: &[Event],
    options: SequenceOptions,
    mut observer: impl FnMut(&EventKeyframe, &KeyframeResult),
) -> Result<TrackingOutput> {
    if frontend.width != intr.width || frontend.height != intr.height {
        return Err(Error::Config(format!(
            "sensor is {}x{} but intrinsics are {}x{}",
            frontend.width, frontend.height, intr.width, intr.height
        )));
    }
    let tracker = Tracker::new(map, *intr, cfg.clone())?;
    let mut cursor = KeyframeCursor::new(events, *frontend)?;
    let mut out = TrackingOutput::default();
    let mut state = initial;
    let mut t_prev = t0;
    while options.max_keyframes.is_none_or(|m| out.trajectory.len() < m) {
        let Some(kf) = cursor.next_keyframe() else {
            break;
        };
        let predicted = state.predict_next(kf.tau - t_prev);
        let result = tracker.track_keyframe(predicted, &kf, out.diagnostics.len())?;
        let pose: Pose = result.state.pose;
        out.trajectory.push(kf.tau, pose)?;
        observer(&kf, &result);
        state = result.state;
        t_prev = kf.tau;
        out.diagnostics.push(result.diagnostics);
    }
    Ok(out)
}

/// Free-function form of [`Tracker::coarse_stage`].
pub fn coarse_stage(
    map: &GaussianMap,
    intr: &CameraIntrinsics,
    cfg: &TrackerConfig,
    state: MotionState,
    kf: &EventKeyframe,
) -> Result<(MotionState, Vec<StageReport>)> {
    Tracker::new(map, *intr, cfg.clone())?.coarse_stage(state, kf)
}

/// Free-function form of [`Tracker::fine_stage`].
pub fn fine_stage(
    map: &GaussianMap,
    intr: &CameraIntrinsics,
    cfg: &TrackerConfig,
    state: MotionState,
    kf: &EventKeyframe,
) -> Result<(MotionState, StageReport)> {
    Tracker::new(map, *intr, cfg.clone())?.fine_stage(state, kf)
}
