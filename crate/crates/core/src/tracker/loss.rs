//! Rendered intensity-change images and the normalized photometric loss.

use ndarray::{Array2, Zip};

use crate::gaussian_map::GaussianMap;
use crate::motion::{Boundary, ExtendedFactors, MotionState, PoseIncrement};
use crate::rasterizer::{render, CameraIntrinsics, RasterSettings, RenderedImage};
use crate::{Error, Result};

/// Below this norm an image is treated as empty.
pub const MIN_NORM: f64 = 1e-12;
/// Loss reported when either image is empty: the maximum for unit vectors
/// with a non-negative inner product, paired with a zero gradient.
pub const DEGENERATE_LOSS: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChangeKind {
    Events,
    Rendered,
}

/// A signed per-pixel change image with its time stamp.
#[derive(Clone, Debug, PartialEq)]
pub struct IntensityChangeImage {
    /// Shape `(height, width)`.
    pub values: Array2<f64>,
    pub tau: f64,
    pub delta_tau: f64,
    pub kind: ChangeKind,
}

/// `ΔI_r` together with the two renders it came from.
#[derive(Clone, Debug)]
pub struct DeltaRender {
    pub image: IntensityChangeImage,
    pub first: RenderedImage,
    pub last: RenderedImage,
    pub first_factors: ExtendedFactors,
    pub last_factors: ExtendedFactors,
}

/// `ln I(T_last) − ln I(T_first)` at the extended boundary poses.
pub fn render_delta_ir(
    map: &GaussianMap,
    state: &MotionState,
    inc: &PoseIncrement,
    tau: f64,
    delta_tau: f64,
    intr: &CameraIntrinsics,
    settings: &RasterSettings,
) -> Result<DeltaRender> {
    let first_factors = ExtendedFactors::new(state, inc, delta_tau, Boundary::First);
    let last_factors = ExtendedFactors::new(state, inc, delta_tau, Boundary::Last);
    let (first, last) = rayon::join(
        || render(map, &first_factors.compose(), intr, settings),
        || render(map, &last_factors.compose(), intr, settings),
    );
    let (first, last) = (first?, last?);
    let values = &last.log_intensity - &first.log_intensity;
    Ok(DeltaRender {
        image: IntensityChangeImage {
            values,
            tau,
            delta_tau,
            kind: ChangeKind::Rendered,
        },
        first,
        last,
        first_factors,
        last_factors,
    })
}

/// Squared distance between the unit-norm restrictions of `rendered` and
/// `events` to `mask`, and its gradient with respect to `rendered`.
pub fn normalized_loss(
    rendered: &Array2<f64>,
    events: &Array2<f64>,
    mask: &Array2<bool>,
) -> Result<(f64, Array2<f64>)> {
    if rendered.dim() != events.dim() || rendered.dim() != mask.dim() {
        return Err(Error::Contract(format!(
            "loss inputs differ in size: {:?}, {:?}, {:?}",
            rendered.dim(),
            events.dim(),
            mask.dim()
        )));
    }
    let mut nr2 = 0.0;
    let mut ne2 = 0.0;
    Zip::from(rendered).and(events).and(mask).for_each(|&r, &e, &m| {
        if m {
            nr2 += r * r;
            ne2 += e * e;
        }
    });
    let (nr, ne) = (nr2.sqrt(), ne2.sqrt());
    let mut grad = Array2::zeros(rendered.dim());
    if nr < MIN_NORM || ne < MIN_NORM {
        return Ok((DEGENERATE_LOSS, grad));
    }
    let mut loss = 0.0;
    let mut dot = 0.0;
    Zip::from(rendered).and(events).and(mask).for_each(|&r, &e, &m| {
        if m {
            let d = r / nr - e / ne;
            loss += d * d;
            dot += (r / nr) * (e / ne);
        }
    });
    // ∂L/∂r = (2/‖r‖)·(r̂ (r̂·ê) − ê) on the mask.
    Zip::from(&mut grad).and(rendered).and(events).and(mask).for_each(|g, &r, &e, &m| {
        if m {
            *g = 2.0 / nr * (r / nr * dot - e / ne);
        }
    });
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian_map::Gaussian3D;
    use crate::motion::v2t;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Array2<f64> {
        Array2::from_shape_fn((h, w), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identical_images_have_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&mut rng, 8, 9);
        let m = Array2::from_elem((8, 9), true);
        let (l, g) = normalized_loss(&a, &a, &m).unwrap();
        assert!(l < 1e-28);
        assert!(g.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = random(&mut rng, 10, 12);
        let e = random(&mut rng, 10, 12);
        let m = Array2::from_shape_fn((10, 12), |_| rng.random_bool(0.7));
        let (l0, _) = normalized_loss(&r, &e, &m).unwrap();
        for k in [1e-6, 0.15, 1.0, 3.0, 1e5] {
            let (lk, _) = normalized_loss(&r, &(&e * k), &m).unwrap();
            assert!((lk - l0).abs() <= 4.0 * f64::EPSILON * l0.max(1.0), "k = {k}");
        }
    }

    #[test]
    fn degenerate_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 4, 4);
        let z = Array2::zeros((4, 4));
        let m = Array2::from_elem((4, 4), true);
        for (r, e) in [(&z, &a), (&a, &z)] {
            let (l, g) = normalized_loss(r, e, &m).unwrap();
            assert_eq!(l, DEGENERATE_LOSS);
            assert!(g.iter().all(|&v| v == 0.0));
        }
        let none = Array2::from_elem((4, 4), false);
        assert_eq!(normalized_loss(&a, &a, &none).unwrap().0, DEGENERATE_LOSS);
        assert!(normalized_loss(&a, &Array2::zeros((4, 5)), &m).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = random(&mut rng, 16, 16);
        let e = random(&mut rng, 16, 16);
        let m = Array2::from_shape_fn((16, 16), |_| rng.random_bool(0.8));
        let (_, g) = normalized_loss(&r, &e, &m).unwrap();
        let h = 1e-6;
        for _ in 0..20 {
            let (y, x) = (rng.random_range(0..16), rng.random_range(0..16));
            let mut p = r.clone();
            p[(y, x)] += h;
            let mut q = r.clone();
            q[(y, x)] -= h;
            let fd = (normalized_loss(&p, &e, &m).unwrap().0 - normalized_loss(&q, &e, &m).unwrap().0) / (2.0 * h);
            let an = g[(y, x)];
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "{fd} vs {an}");
        }
    }

    #[test]
    fn outside_mask_gradient_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = random(&mut rng, 6, 6);
        let e = random(&mut rng, 6, 6);
        let m = Array2::from_shape_fn((6, 6), |(y, _)| y < 3);
        let (_, g) = normalized_loss(&r, &e, &m).unwrap();
        assert!(g.indexed_iter().all(|((y, _), &v)| y < 3 || v == 0.0));
    }

    fn edge_scene() -> GaussianMap {
        // Dense sheet of small splats, dark left half and bright right half
        // with the boundary at x = 0, so both halves render flat.
        let mut gs = Vec::new();
        for j in -18..=18 {
            for i in -24..=24 {
                let x = i as f64 * 0.05 + 0.025;
                let gray = if x < 0.0 { 0.1 } else { 0.9 };
                gs.push(Gaussian3D::isotropic(Vector3::new(x, j as f64 * 0.05, 2.0), 0.05, 0.95, gray));
            }
        }
        GaussianMap::new(gs).unwrap()
    }

    #[test]
    fn static_state_renders_no_change() {
        let map = edge_scene();
        let state = MotionState::at_rest(v2t(&Vector3::new(0.0, 0.0, 0.0), &Vector3::zeros()));
        let intr = CameraIntrinsics::centered(40.0, 32, 24);
        let d = render_delta_ir(&map, &state, &PoseIncrement::zero(), 0.0, 0.05, &intr, &RasterSettings::default()).unwrap();
        assert!(d.image.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn velocity_reversal_negates_change() {
        let map = edge_scene();
        let intr = CameraIntrinsics::centered(40.0, 32, 24);
        let pose = v2t(&Vector3::new(0.01, 0.02, 0.0), &Vector3::new(0.01, 0.0, 0.02));
        let v = Vector3::new(0.3, 0.1, -0.05);
        let w = Vector3::new(0.2, -0.4, 0.1);
        let fwd = MotionState::new(pose, v, w);
        let back = MotionState::new(pose, -v, -w);
        let s = RasterSettings::default();
        let a = render_delta_ir(&map, &fwd, &PoseIncrement::zero(), 0.0, 0.05, &intr, &s).unwrap();
        let b = render_delta_ir(&map, &back, &PoseIncrement::zero(), 0.0, 0.05, &intr, &s).unwrap();
        let worst = (&a.image.values + &b.image.values).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst < 1e-9, "{worst}");
    }

    #[test]
    fn translation_response_sits_on_the_edge() {
        let map = edge_scene();
        let intr = CameraIntrinsics::centered(40.0, 32, 24);
        // Camera moves +x, so the scene shifts left in the image and the
        // bright side advances over the edge column.
        let state = MotionState::new(v2t(&Vector3::zeros(), &Vector3::zeros()), Vector3::new(-1.0, 0.0, 0.0), Vector3::zeros());
        let d = render_delta_ir(&map, &state, &PoseIncrement::zero(), 0.0, 0.02, &intr, &RasterSettings::default()).unwrap();
        let row = d.image.values.row(12).to_owned();
        let (peak, _) = row.iter().enumerate().fold((0, 0.0f64), |(bi, bv), (i, &v)| if v.abs() > bv { (i, v.abs()) } else { (bi, bv) });
        assert!((peak as f64 - 15.5).abs() <= 3.0, "peak at column {peak}");
        // Far from the edge the response is negligible.
        assert!(row[0].abs() < 0.05 * row[peak].abs());
        assert!(row[31].abs() < 0.05 * row[peak].abs());
        // Moving the other way flips the sign at the edge.
        let state = MotionState::new(state.pose, -state.velocity, Vector3::zeros());
        let e = render_delta_ir(&map, &state, &PoseIncrement::zero(), 0.0, 0.02, &intr, &RasterSettings::default()).unwrap();
        assert!(e.image.values[(12, peak)] * row[peak] < 0.0);
    }
}
