//! Per-pixel full-sort reference renderer.
//!
//! No tiling and no shared sort: every pixel gathers every splat whose
//! support covers it, sorts that list by depth and blends it. Used to check
//! the tile renderer.

use ndarray::Array2;

use super::{project_gaussian, CameraIntrinsics, RasterSettings, MAX_ALPHA, MIN_TRANSMITTANCE};
use crate::gaussian_map::GaussianMap;
use crate::motion::Pose;

/// Returns the blended luma image, shape `(height, width)`.
pub fn render_naive(
    map: &GaussianMap,
    pose: &Pose,
    intr: &CameraIntrinsics,
    settings: &RasterSettings,
) -> Array2<f64> {
    let splats: Vec<_> = map
        .gaussians()
        .iter()
        .enumerate()
        .filter_map(|(i, g)| project_gaussian(g, i, pose, intr, settings))
        .collect();
    let cutoff2 = settings.cutoff_sigma * settings.cutoff_sigma;
    let floor = (-0.5 * cutoff2).exp();
    Array2::from_shape_fn((intr.height, intr.width), |(y, x)| {
        let (px, py) = (x as f64, y as f64);
        let mut hits: Vec<(f64, usize, f64, f64)> = splats
            .iter()
            .filter_map(|s| {
                let dx = px - s.mean2d.x;
                let dy = py - s.mean2d.y;
                let inv = s.cov2d.try_inverse()?;
                let m = dx * (inv[(0, 0)] * dx + inv[(0, 1)] * dy) + dy * (inv[(1, 0)] * dx + inv[(1, 1)] * dy);
                (m < cutoff2).then(|| (s.depth, s.source_index, s.opacity * ((-0.5 * m).exp() - floor) / (1.0 - floor), s.intensity))
            })
            .collect();
        hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut t = 1.0;
        let mut out = 0.0;
        for (_, _, a, lum) in hits {
            let alpha = a.min(MAX_ALPHA);
            if t * (1.0 - alpha) < MIN_TRANSMITTANCE {
                break;
            }
            out += lum * alpha * t;
            t *= 1.0 - alpha;
        }
        out
    })
}
