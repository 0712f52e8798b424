//! Timestamped world-to-camera pose sequences.

use nalgebra::{Isometry3, Translation3};

use crate::motion::{MotionState, Pose};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseSample {
    pub t: f64,
    /// World-to-camera transform.
    pub pose: Pose,
}

impl PoseSample {
    pub fn new(t: f64, pose: Pose) -> Self {
        Self { t, pose }
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> nalgebra::Vector3<f64> {
        self.pose.inverse().translation.vector
    }
}

/// Samples with strictly increasing timestamps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    samples: Vec<PoseSample>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_samples(samples: Vec<PoseSample>) -> Result<Self> {
        let mut traj = Self::new();
        for s in samples {
            traj.push(s.t, s.pose)?;
        }
        Ok(traj)
    }

    pub fn push(&mut self, t: f64, pose: Pose) -> Result<()> {
        if !t.is_finite() {
            return Err(Error::Contract(format!("non-finite timestamp {t}")));
        }
        if let Some(last) = self.samples.last() {
            if t <= last.t {
                return Err(Error::Contract(format!(
                    "timestamp {t} does not increase past {}",
                    last.t
                )));
            }
        }
        self.samples.push(PoseSample::new(t, pose));
        Ok(())
    }

    pub fn samples(&self) -> &[PoseSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn first(&self) -> Option<&PoseSample> {
        self.samples.first()
    }

    pub fn last(&self) -> Option<&PoseSample> {
        self.samples.last()
    }

    /// Sample closest in time to `t`, if within `tolerance`.
    pub fn nearest(&self, t: f64, tolerance: f64) -> Option<&PoseSample> {
        let i = self.samples.partition_point(|s| s.t < t);
        let candidates = [i.checked_sub(1), Some(i)];
        candidates
            .into_iter()
            .flatten()
            .filter_map(|k| self.samples.get(k))
            .filter(|s| (s.t - t).abs() <= tolerance)
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
    }

    /// Pose at time `t`: camera centers interpolate linearly and camera
    /// orientations by slerp. `None` outside the sampled span.
    pub fn interpolate(&self, t: f64) -> Option<Pose> {
        let first = self.samples.first()?;
        let last = self.samples.last()?;
        if t < first.t || t > last.t {
            return None;
        }
        let i = self.samples.partition_point(|s| s.t <= t);
        if i == self.samples.len() {
            return Some(last.pose);
        }
        let (a, b) = (&self.samples[i - 1], &self.samples[i]);
        let u = (t - a.t) / (b.t - a.t);
        let (wa, wb) = (a.pose.inverse(), b.pose.inverse());
        let center = wa.translation.vector.lerp(&wb.translation.vector, u);
        let rot = wa.rotation.slerp(&wb.rotation, u);
        Some(Isometry3::from_parts(Translation3::from(center), rot).inverse())
    }

    /// Keyframe-frame velocities at `t` by central differences over `±h`:
    /// `T(t+h) · T(t−h)⁻¹ = v2t(2h·v, 2h·ω)`.
    pub fn motion_state_at(&self, t: f64, h: f64) -> Option<MotionState> {
        let pose = self.interpolate(t)?;
        let first = self.samples.first()?.t;
        let last = self.samples.last()?.t;
        let (a, b) = ((t - h).max(first), (t + h).min(last));
        if !(b > a) {
            return Some(MotionState::at_rest(pose));
        }
        let rel = self.interpolate(b)? * self.interpolate(a)?.inverse();
        let span = b - a;
        Some(MotionState::new(
            pose,
            rel.translation.vector / span,
            rel.rotation.scaled_axis() / span,
        ))
    }

    /// Keep the first `count` samples.
    pub fn truncated(&self, count: usize) -> Self {
        Self {
            samples: self.samples.iter().take(count).copied().collect(),
        }
    }
}
