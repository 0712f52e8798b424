//! Reverse-mode pass from per-pixel log-intensity gradients to each
//! gaussian's camera-frame mean and to the world-to-camera rotation.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use ndarray::Array2;
use rayon::prelude::*;

use super::{projection_jacobian, Falloff, RenderedImage, MAX_ALPHA};
use crate::{Error, Result};

/// Rows per work chunk. Fixed so the merge order does not depend on the
/// thread count.
const ROWS_PER_CHUNK: usize = 8;

/// Per-gaussian camera gradients, indexed like the source map.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraGradients {
    /// `∂L/∂(T_cw μ)`.
    pub d_point: Vec<Vector3<f64>>,
    /// `∂L/∂R_cw` through the projected covariance.
    pub d_rot: Vec<Matrix3<f64>>,
}

impl CameraGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            d_point: vec![Vector3::zeros(); n],
            d_rot: vec![Matrix3::zeros(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.d_point.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_point.is_empty()
    }
}

/// Image-space gradient of one splat: mean (2) and conic entries (a, b, c).
#[derive(Clone, Copy, Default)]
struct SplatGrad {
    mean: Vector2<f64>,
    conic: [f64; 3],
}

pub fn backward(rendered: &RenderedImage, pixel_grad: &Array2<f64>) -> Result<CameraGradients> {
    let (h, w) = (rendered.height(), rendered.width());
    if pixel_grad.dim() != (h, w) {
        return Err(Error::Contract(format!(
            "pixel gradient is {:?}, rendered image is {:?}",
            pixel_grad.dim(),
            (h, w)
        )));
    }
    let n_splats = rendered.splats.len();
    let falloff = Falloff::new(rendered.settings.cutoff_sigma);
    let floor = rendered.settings.log_floor;

    let chunks: Vec<Vec<SplatGrad>> = (0..h.div_ceil(ROWS_PER_CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut acc = vec![SplatGrad::default(); n_splats];
            let mut touched = false;
            for y in chunk * ROWS_PER_CHUNK..((chunk + 1) * ROWS_PER_CHUNK).min(h) {
                for x in 0..w {
                    let g = pixel_grad[(y, x)];
                    let lum = rendered.intensity[(y, x)];
                    if g == 0.0 || lum <= floor {
                        continue;
                    }
                    touched = true;
                    let d_lum = g / lum;
                    let px = &rendered.pixels[y * w + x];
                    let records = &rendered.contributions[px.start..px.start + px.len];
                    // Luma blended behind the current record.
                    let mut behind = 0.0;
                    for c in records.iter().rev() {
                        let s = &rendered.splats[c.splat as usize];
                        let d_alpha = s.intensity * c.transmittance - behind / (1.0 - c.alpha);
                        behind += s.intensity * c.alpha * c.transmittance;
                        let Some((a_raw, slope, dx, dy)) = falloff.alpha(s, x as f64, y as f64) else {
                            continue;
                        };
                        if a_raw > MAX_ALPHA {
                            continue;
                        }
                        let d_power = d_lum * d_alpha * slope;
                        let q = &s.conic;
                        let e = &mut acc[c.splat as usize];
                        e.mean.x += d_power * (q[(0, 0)] * dx + q[(0, 1)] * dy);
                        e.mean.y += d_power * (q[(1, 0)] * dx + q[(1, 1)] * dy);
                        e.conic[0] += -0.5 * d_power * dx * dx;
                        e.conic[1] += -d_power * dx * dy;
                        e.conic[2] += -0.5 * d_power * dy * dy;
                    }
                }
            }
            if !touched {
                acc.clear();
            }
            acc
        })
        .collect();

    let mut total = vec![SplatGrad::default(); n_splats];
    for chunk in chunks.iter().filter(|c| !c.is_empty()) {
        for (t, c) in total.iter_mut().zip(chunk) {
            t.mean += c.mean;
            for k in 0..3 {
                t.conic[k] += c.conic[k];
            }
        }
    }

    let intr = &rendered.intrinsics;
    let rotation = rendered.pose.rotation.to_rotation_matrix().into_inner();
    let mut out = CameraGradients::zeros(rendered.map_len);
    for (s, g) in rendered.splats.iter().zip(&total) {
        let p = s.cam_point;
        let (iz, iz2) = (1.0 / p.z, 1.0 / (p.z * p.z));

        // Conic → covariance: G_Σ = -Q G_Q Q with symmetric G_Q.
        let g_q = Matrix2::new(g.conic[0], 0.5 * g.conic[1], 0.5 * g.conic[1], g.conic[2]);
        let g_cov2d = -(s.conic * g_q * s.conic);

        let j: Matrix2x3<f64> = projection_jacobian(&p, intr);
        // C = R Σ Rᵀ, so ∂L/∂R = 2 G_C R Σ = 2 G_C C R.
        let g_j = 2.0 * g_cov2d * j * s.cov_cam;
        let g_cov_cam = j.transpose() * g_cov2d * j;
        let g_rot = 2.0 * g_cov_cam * s.cov_cam * rotation;

        let mut d_point = Vector3::new(
            g.mean.x * intr.fx * iz,
            g.mean.y * intr.fy * iz,
            -(g.mean.x * intr.fx * p.x + g.mean.y * intr.fy * p.y) * iz2,
        );
        d_point.x += -g_j[(0, 2)] * intr.fx * iz2;
        d_point.y += -g_j[(1, 2)] * intr.fy * iz2;
        d_point.z += -(g_j[(0, 0)] * intr.fx + g_j[(1, 1)] * intr.fy) * iz2
            + 2.0 * (g_j[(0, 2)] * intr.fx * p.x + g_j[(1, 2)] * intr.fy * p.y) * iz2 * iz;

        out.d_point[s.source_index] = d_point;
        out.d_rot[s.source_index] = g_rot;
    }
    Ok(out)
}
