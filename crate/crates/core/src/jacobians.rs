//! Analytic derivatives of the extended transform `T' = T1 · T2 · T3`.
//!
//! Increments and velocities act by left perturbation: the pose increment
//! perturbs `T2` as `exp(δξ^) · T2`, and the velocity perturbs the whole
//! product as `exp(±Δτ/2 · δξ^) · T'`. Columns are ordered `(Δt, Δθ)` or
//! `(v, ω)`. Rotation Jacobians differentiate `vec(R')`, the column-major
//! flattening of the camera rotation: rows `3j..3j+3` hold the derivative of
//! column `j`.

use nalgebra::{Matrix3, Matrix3x6, SMatrix, SVector, Vector3};

use crate::motion::{skew, Boundary, ExtendedFactors};
use crate::rasterizer::CameraGradients;
use crate::{Error, Result};

pub type Matrix9x6 = SMatrix<f64, 9, 6>;
pub type Gradient12 = SVector<f64, 12>;

fn rotation(p: &crate::motion::Pose) -> Matrix3<f64> {
    p.rotation.to_rotation_matrix().into_inner()
}

/// `∂(T'μ)/∂(Δt, Δθ) = R1 [I | −(R2 (R3 μ + t3) + t2)^]`.
pub fn point_pose_jacobian(f: &ExtendedFactors, mu: &Vector3<f64>) -> Matrix3x6<f64> {
    let lever = f.increment.transform_point(&f.keyframe.transform_point(&(*mu).into())).coords;
    let r1 = rotation(&f.velocity);
    let mut j = Matrix3x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&r1);
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-r1 * skew(&lever)));
    j
}

/// `∂vec(R')/∂(Δt, Δθ)`: zero translation block; the Δθ block of column
/// `j` is `−R1 [(R2 R3)_{:,j}]^`.
pub fn rot_pose_jacobian(f: &ExtendedFactors) -> Matrix9x6 {
    let r1 = rotation(&f.velocity);
    let r23 = rotation(&f.increment) * rotation(&f.keyframe);
    let mut j = Matrix9x6::zeros();
    for c in 0..3 {
        let block = -r1 * skew(&r23.column(c).into_owned());
        j.fixed_view_mut::<3, 3>(3 * c, 3).copy_from(&block);
    }
    j
}

fn velocity_scale(delta_tau: f64, boundary: Boundary) -> f64 {
    boundary.sign() * 0.5 * delta_tau
}

/// `∂(T'μ)/∂(v, ω) = ±Δτ/2 · [I | −(T'μ)^]`.
pub fn point_vel_jacobian(
    f: &ExtendedFactors,
    mu: &Vector3<f64>,
    delta_tau: f64,
    boundary: Boundary,
) -> Matrix3x6<f64> {
    let s = velocity_scale(delta_tau, boundary);
    let p = (f.velocity * f.increment * f.keyframe).transform_point(&(*mu).into()).coords;
    let mut j = Matrix3x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(Matrix3::identity() * s));
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-s * skew(&p)));
    j
}

/// `∂vec(R')/∂(v, ω)`: zero `v` block; the ω block of column `j` is
/// `∓Δτ/2 · [(R1 R2 R3)_{:,j}]^`.
pub fn rot_vel_jacobian(f: &ExtendedFactors, delta_tau: f64, boundary: Boundary) -> Matrix9x6 {
    let s = velocity_scale(delta_tau, boundary);
    let r = rotation(&f.velocity) * rotation(&f.increment) * rotation(&f.keyframe);
    let mut j = Matrix9x6::zeros();
    for c in 0..3 {
        let block = -s * skew(&r.column(c).into_owned());
        j.fixed_view_mut::<3, 3>(3 * c, 3).copy_from(&block);
    }
    j
}

/// All four Jacobians for one boundary render, point blocks per gaussian.
#[derive(Clone, Debug)]
pub struct CameraDerivatives {
    pub d_point_d_pose: Vec<Matrix3x6<f64>>,
    pub d_rot_d_pose: Matrix9x6,
    pub d_point_d_vel: Vec<Matrix3x6<f64>>,
    pub d_rot_d_vel: Matrix9x6,
}

impl CameraDerivatives {
    pub fn new<'a>(
        f: &ExtendedFactors,
        means: impl IntoIterator<Item = &'a Vector3<f64>>,
        delta_tau: f64,
        boundary: Boundary,
    ) -> Self {
        let (d_point_d_pose, d_point_d_vel) = means
            .into_iter()
            .map(|mu| (point_pose_jacobian(f, mu), point_vel_jacobian(f, mu, delta_tau, boundary)))
            .unzip();
        Self {
            d_point_d_pose,
            d_rot_d_pose: rot_pose_jacobian(f),
            d_point_d_vel,
            d_rot_d_vel: rot_vel_jacobian(f, delta_tau, boundary),
        }
    }

    pub fn len(&self) -> usize {
        self.d_point_d_pose.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_point_d_pose.is_empty()
    }
}

/// Chain rasterizer gradients through the Jacobians and sum over gaussians
/// and over every boundary render given. Output order: `Δt, Δθ, v, ω`.
pub fn full_gradient(parts: &[(&CameraGradients, &CameraDerivatives)]) -> Result<Gradient12> {
    let mut out = Gradient12::zeros();
    for (grads, derivs) in parts {
        if grads.len() != derivs.len() || grads.d_rot.len() != derivs.len() {
            return Err(Error::Contract(format!(
                "{} gaussian gradients against {} jacobians",
                grads.len(),
                derivs.len()
            )));
        }
        let mut pose = SVector::<f64, 6>::zeros();
        let mut vel = SVector::<f64, 6>::zeros();
        let mut d_rot = Matrix3::zeros();
        for k in 0..grads.len() {
            let g = &grads.d_point[k];
            if *g != Vector3::zeros() {
                pose += derivs.d_point_d_pose[k].tr_mul(g);
                vel += derivs.d_point_d_vel[k].tr_mul(g);
            }
            d_rot += grads.d_rot[k];
        }
        // Column-major storage is exactly vec(·).
        let vec_rot = SVector::<f64, 9>::from_column_slice(d_rot.as_slice());
        pose += derivs.d_rot_d_pose.tr_mul(&vec_rot);
        vel += derivs.d_rot_d_vel.tr_mul(&vec_rot);
        for i in 0..6 {
            out[i] += pose[i];
            out[6 + i] += vel[i];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{v2t, MotionState, Pose, PoseIncrement};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rv(rng: &mut ChaCha8Rng, s: f64) -> Vector3<f64> {
        Vector3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
    }

    fn random_factors(rng: &mut ChaCha8Rng) -> ExtendedFactors {
        ExtendedFactors {
            velocity: v2t(&rv(rng, 0.1), &rv(rng, 0.2)),
            increment: v2t(&rv(rng, 0.2), &rv(rng, 0.5)),
            keyframe: v2t(&rv(rng, 2.0), &rv(rng, 3.0)),
        }
    }

    fn identity() -> ExtendedFactors {
        ExtendedFactors {
            velocity: Pose::identity(),
            increment: Pose::identity(),
            keyframe: Pose::identity(),
        }
    }

    fn generators() -> Matrix9x6 {
        let mut j = Matrix9x6::zeros();
        for c in 0..3 {
            j.fixed_view_mut::<3, 3>(3 * c, 3).copy_from(&(-skew(&Vector3::ith(c, 1.0))));
        }
        j
    }

    fn vec_r(p: &Pose) -> SVector<f64, 9> {
        SVector::<f64, 9>::from_column_slice(rotation(p).as_slice())
    }

    fn unit(i: usize) -> (Vector3<f64>, Vector3<f64>) {
        let mut e = [Vector3::zeros(), Vector3::zeros()];
        e[i / 3][i % 3] = 1.0;
        (e[0], e[1])
    }

    /// Column-wise comparison, relative to the column norm with a 1e-9 floor.
    fn max_rel_err<const R: usize>(an: &SMatrix<f64, R, 6>, fd: &SMatrix<f64, R, 6>) -> f64 {
        (0..6)
            .map(|c| (an.column(c) - fd.column(c)).norm() / an.column(c).norm().max(1e-9))
            .fold(0.0, f64::max)
    }

    const H: f64 = 1e-6;

    fn fd_pose(f: &ExtendedFactors, mu: &Vector3<f64>) -> (Matrix3x6<f64>, Matrix9x6) {
        let eval = |i: usize, sign: f64| {
            let (dt, dth) = unit(i);
            let pert = v2t(&(dt * sign * H), &(dth * sign * H));
            let t = f.velocity * pert * f.increment * f.keyframe;
            (t.transform_point(&(*mu).into()).coords, vec_r(&t))
        };
        let mut jp = Matrix3x6::zeros();
        let mut jr = Matrix9x6::zeros();
        for i in 0..6 {
            let (pp, rp) = eval(i, 1.0);
            let (pm, rm) = eval(i, -1.0);
            jp.set_column(i, &((pp - pm) / (2.0 * H)));
            jr.set_column(i, &((rp - rm) / (2.0 * H)));
        }
        (jp, jr)
    }

    fn fd_vel(f: &ExtendedFactors, mu: &Vector3<f64>, dtau: f64, b: Boundary) -> (Matrix3x6<f64>, Matrix9x6) {
        let s = b.sign() * 0.5 * dtau;
        let eval = |i: usize, sign: f64| {
            let (dv, dw) = unit(i);
            let pert = v2t(&(dv * s * sign * H), &(dw * s * sign * H));
            let t = pert * f.velocity * f.increment * f.keyframe;
            (t.transform_point(&(*mu).into()).coords, vec_r(&t))
        };
        let mut jp = Matrix3x6::zeros();
        let mut jr = Matrix9x6::zeros();
        for i in 0..6 {
            let (pp, rp) = eval(i, 1.0);
            let (pm, rm) = eval(i, -1.0);
            jp.set_column(i, &((pp - pm) / (2.0 * H)));
            jr.set_column(i, &((rp - rm) / (2.0 * H)));
        }
        (jp, jr)
    }

    #[test]
    fn identity_examples() {
        let f = identity();
        let j = point_pose_jacobian(&f, &Vector3::zeros());
        let mut expected = Matrix3x6::zeros();
        expected.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
        assert_eq!(j, expected);

        let z = Vector3::new(0.0, 0.0, 1.0);
        let j = point_pose_jacobian(&f, &z);
        assert_eq!(j.fixed_view::<3, 3>(0, 0), Matrix3::identity());
        assert_eq!(j.fixed_view::<3, 3>(0, 3), -skew(&z));

        assert_eq!(rot_pose_jacobian(&f), generators());
        assert_eq!(rot_vel_jacobian(&f, 2.0, Boundary::Last), generators());

        let jv = point_vel_jacobian(&f, &z, 2.0, Boundary::Last);
        assert_eq!(jv.fixed_view::<3, 3>(0, 0), Matrix3::identity());
        assert_eq!(jv.fixed_view::<3, 3>(0, 3), -skew(&z));
    }

    #[test]
    fn zero_interval_gives_zero_velocity_jacobians() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_factors(&mut rng);
        let mu = rv(&mut rng, 1.0);
        for b in [Boundary::First, Boundary::Last] {
            assert_eq!(point_vel_jacobian(&f, &mu, 0.0, b), Matrix3x6::zeros());
            assert_eq!(rot_vel_jacobian(&f, 0.0, b), Matrix9x6::zeros());
        }
    }

    #[test]
    fn translation_block_of_rotation_jacobians_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let f = random_factors(&mut rng);
            assert_eq!(rot_pose_jacobian(&f).fixed_columns::<3>(0), SMatrix::<f64, 9, 3>::zeros());
            assert_eq!(rot_vel_jacobian(&f, 0.1, Boundary::First).fixed_columns::<3>(0), SMatrix::<f64, 9, 3>::zeros());
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..300 {
            let f = random_factors(&mut rng);
            let mu = rv(&mut rng, 2.0);
            let dtau = rng.random_range(0.01..0.2);
            let (fp, fr) = fd_pose(&f, &mu);
            assert!(max_rel_err(&point_pose_jacobian(&f, &mu), &fp) < 1e-5);
            assert!(max_rel_err(&rot_pose_jacobian(&f), &fr) < 1e-5);
            for b in [Boundary::First, Boundary::Last] {
                let (fp, fr) = fd_vel(&f, &mu, dtau, b);
                assert!(max_rel_err(&point_vel_jacobian(&f, &mu, dtau, b), &fp) < 1e-5);
                assert!(max_rel_err(&rot_vel_jacobian(&f, dtau, b), &fr) < 1e-5);
            }
        }
    }

    #[test]
    fn pose_jacobians_match_direct_differences_at_zero_increment() {
        // With T2 = I the left perturbation coincides with varying (Δt, Δθ)
        // directly inside compose_extended.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let state = MotionState::new(v2t(&rv(&mut rng, 2.0), &rv(&mut rng, 3.0)), rv(&mut rng, 1.0), rv(&mut rng, 2.0));
            let mu = rv(&mut rng, 2.0);
            let dtau = rng.random_range(0.0..0.1);
            for b in [Boundary::First, Boundary::Last] {
                let f = ExtendedFactors::new(&state, &PoseIncrement::zero(), dtau, b);
                let mut jp = Matrix3x6::zeros();
                let mut jr = Matrix9x6::zeros();
                for i in 0..6 {
                    let (dt, dth) = unit(i);
                    let at = |s: f64| {
                        let t = crate::motion::compose_extended(&state, &PoseIncrement::new(dt * s, dth * s), dtau, b);
                        (t.transform_point(&mu.into()).coords, vec_r(&t))
                    };
                    let (pp, rp) = at(H);
                    let (pm, rm) = at(-H);
                    jp.set_column(i, &((pp - pm) / (2.0 * H)));
                    jr.set_column(i, &((rp - rm) / (2.0 * H)));
                }
                assert!(max_rel_err(&point_pose_jacobian(&f, &mu), &jp) < 1e-5);
                assert!(max_rel_err(&rot_pose_jacobian(&f), &jr) < 1e-5);
            }
        }
    }

    #[test]
    fn velocity_jacobians_are_linear_in_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_factors(&mut rng);
        let mu = rv(&mut rng, 1.0);
        for b in [Boundary::First, Boundary::Last] {
            let a = point_vel_jacobian(&f, &mu, 0.05, b);
            let c = point_vel_jacobian(&f, &mu, 0.1, b);
            assert!((c - 2.0 * a).abs().max() < 1e-15);
            let a = rot_vel_jacobian(&f, 0.05, b);
            let c = rot_vel_jacobian(&f, 0.1, b);
            assert!((c - 2.0 * a).abs().max() < 1e-15);
        }
        assert_eq!(
            point_vel_jacobian(&f, &mu, 0.1, Boundary::First),
            -point_vel_jacobian(&f, &mu, 0.1, Boundary::Last)
        );
    }

    #[test]
    fn pose_and_velocity_point_jacobians_coincide_at_identity_prefix() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut f = random_factors(&mut rng);
        f.velocity = Pose::identity();
        f.increment = Pose::identity();
        let mu = rv(&mut rng, 1.0);
        let a = point_pose_jacobian(&f, &mu);
        let b = point_vel_jacobian(&f, &mu, 2.0, Boundary::Last);
        assert!((a - b).abs().max() < 1e-14);
    }

    #[test]
    fn full_gradient_zero_and_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = random_factors(&mut rng);
        let means = vec![rv(&mut rng, 1.0); 3];
        let d = CameraDerivatives::new(&f, &means, 0.1, Boundary::Last);
        let g = CameraGradients::zeros(3);
        assert_eq!(full_gradient(&[(&g, &d)]).unwrap(), Gradient12::zeros());
        let g2 = CameraGradients::zeros(2);
        assert!(matches!(full_gradient(&[(&g2, &d)]), Err(Error::Contract(_))));
    }

    #[test]
    fn full_gradient_of_a_coordinate_is_the_jacobian_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = random_factors(&mut rng);
        let mu = rv(&mut rng, 1.0);
        let d = CameraDerivatives::new(&f, [&mu], 0.1, Boundary::Last);
        let mut g = CameraGradients::zeros(1);
        g.d_point[0] = Vector3::x();
        let grad = full_gradient(&[(&g, &d)]).unwrap();
        let row_pose = point_pose_jacobian(&f, &mu).row(0).transpose();
        let row_vel = point_vel_jacobian(&f, &mu, 0.1, Boundary::Last).row(0).transpose();
        assert_eq!(grad.fixed_rows::<6>(0), row_pose);
        assert_eq!(grad.fixed_rows::<6>(6), row_vel);
    }

    #[test]
    fn full_gradient_sums_boundaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = random_factors(&mut rng);
        let mu = rv(&mut rng, 1.0);
        let first = CameraDerivatives::new(&f, [&mu], 0.1, Boundary::First);
        let last = CameraDerivatives::new(&f, [&mu], 0.1, Boundary::Last);
        let mut g = CameraGradients::zeros(1);
        g.d_point[0] = rv(&mut rng, 1.0);
        g.d_rot[0] = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let a = full_gradient(&[(&g, &first)]).unwrap();
        let b = full_gradient(&[(&g, &last)]).unwrap();
        let sum = a + b;
        assert!((full_gradient(&[(&g, &first), (&g, &last)]).unwrap() - sum).abs().max() < 1e-15);
        // Same factors, opposite boundary: velocity parts cancel.
        assert!(sum.fixed_rows::<6>(6).abs().max() < 1e-15);
    }
}
