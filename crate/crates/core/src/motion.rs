//! Keyframe motion state and the transforms built from it.
//!
//! Velocities are expressed in the keyframe camera frame: every velocity
//! factor left-multiplies the world-to-camera pose `T_cw`.

use nalgebra::{Isometry3, Matrix3, Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// Rigid world-to-camera transform.
pub type Pose = Isometry3<f64>;

/// Skew-symmetric matrix `[v]^` with `[v]^ w = v × w`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues exponential of a rotation vector.
///
/// Below `1e-8` rad the half-angle terms fall back to their second-order
/// Taylor expansion.
pub fn so3_exp(phi: &Vector3<f64>) -> UnitQuaternion<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let (w, s) = if theta < 1e-8 {
        (1.0 - theta2 / 8.0, 0.5 - theta2 / 48.0)
    } else {
        let half = 0.5 * theta;
        (half.cos(), half.sin() / theta)
    };
    UnitQuaternion::new_normalize(Quaternion::new(w, s * phi.x, s * phi.y, s * phi.z))
}

/// Transform from a translation and a Rodrigues vector.
///
/// The translation is taken as-is (no SE(3) left-Jacobian coupling).
pub fn v2t(rho: &Vector3<f64>, phi: &Vector3<f64>) -> Pose {
    Isometry3::from_parts(Translation3::from(*rho), so3_exp(phi))
}

/// Renormalize the rotation quaternion of a composed pose.
pub fn renormalized(pose: Pose) -> Pose {
    Isometry3::from_parts(
        pose.translation,
        UnitQuaternion::new_normalize(pose.rotation.into_inner()),
    )
}

/// Which end of the accumulation interval a render belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    First,
    Last,
}

impl Boundary {
    pub fn sign(self) -> f64 {
        match self {
            Boundary::First => -1.0,
            Boundary::Last => 1.0,
        }
    }
}

/// Keyframe pose plus first-order dynamics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionState {
    pub pose: Pose,
    /// Linear velocity in m/s, keyframe camera frame.
    pub velocity: Vector3<f64>,
    /// Angular velocity in rad/s, keyframe camera frame.
    pub angular_velocity: Vector3<f64>,
}

impl MotionState {
    pub fn at_rest(pose: Pose) -> Self {
        Self {
            pose,
            velocity: Vector3::zeros(),
            angular_velocity: Vector3::zeros(),
        }
    }

    pub fn new(pose: Pose, velocity: Vector3<f64>, angular_velocity: Vector3<f64>) -> Self {
        Self {
            pose,
            velocity,
            angular_velocity,
        }
    }

    /// Velocity factor `T1` of the extended transform for one boundary.
    pub fn velocity_factor(&self, delta_tau: f64, boundary: Boundary) -> Pose {
        let s = boundary.sign() * 0.5 * delta_tau;
        v2t(&(self.velocity * s), &(self.angular_velocity * s))
    }

    /// Poses at the first and last event of an interval centred on this keyframe.
    pub fn boundary_poses(&self, delta_tau: f64) -> (Pose, Pose) {
        (
            renormalized(self.velocity_factor(delta_tau, Boundary::First) * self.pose),
            renormalized(self.velocity_factor(delta_tau, Boundary::Last) * self.pose),
        )
    }

    /// Constant-velocity extrapolation to the next keyframe.
    pub fn predict_next(&self, dt: f64) -> Self {
        let step = v2t(&(self.velocity * dt), &(self.angular_velocity * dt));
        Self {
            pose: renormalized(step * self.pose),
            ..*self
        }
    }

    /// Fold a converged increment into the keyframe pose (left multiplication).
    pub fn apply_increment(&self, inc: &PoseIncrement) -> Self {
        Self {
            pose: renormalized(inc.transform() * self.pose),
            ..*self
        }
    }
}

/// Pose increment `(Δt, Δθ)` around the current keyframe pose.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PoseIncrement {
    pub delta_t: Vector3<f64>,
    pub delta_theta: Vector3<f64>,
}

impl PoseIncrement {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(delta_t: Vector3<f64>, delta_theta: Vector3<f64>) -> Self {
        Self {
            delta_t,
            delta_theta,
        }
    }

    pub fn transform(&self) -> Pose {
        v2t(&self.delta_t, &self.delta_theta)
    }

    pub fn is_zero(&self) -> bool {
        self.delta_t == Vector3::zeros() && self.delta_theta == Vector3::zeros()
    }
}

/// The three factors `T1 · T2 · T3` of the extended transform.
#[derive(Clone, Copy, Debug)]
pub struct ExtendedFactors {
    pub velocity: Pose,
    pub increment: Pose,
    pub keyframe: Pose,
}

impl ExtendedFactors {
    pub fn new(state: &MotionState, inc: &PoseIncrement, delta_tau: f64, boundary: Boundary) -> Self {
        Self {
            velocity: state.velocity_factor(delta_tau, boundary),
            increment: inc.transform(),
            keyframe: state.pose,
        }
    }

    pub fn compose(&self) -> Pose {
        renormalized(self.velocity * self.increment * self.keyframe)
    }
}

/// Extended transform `T' = T1(±v, ±ω; Δτ/2) · T2(Δt, Δθ) · T_cw`.
pub fn compose_extended(
    state: &MotionState,
    inc: &PoseIncrement,
    delta_tau: f64,
    boundary: Boundary,
) -> Pose {
    ExtendedFactors::new(state, inc, delta_tau, boundary).compose()
}

/// Geodesic angle of a rotation in radians.
pub fn rotation_angle(q: &UnitQuaternion<f64>) -> f64 {
    let q = q.quaternion();
    2.0 * q.imag().norm().atan2(q.w.abs())
}
