//! Log-intensity rendering of splat maps and its camera-space gradient.
//!
//! Splats are projected with the EWA affine approximation, binned into
//! square tiles, depth sorted and alpha blended front to back. Scalar
//! intensity is the Rec.601 luma of the blended color and the output is its
//! natural log with a floor of `ln(log_floor)`.
//!
//! The backward pass only differentiates through the projected mean and
//! covariance; view-dependent color is held fixed.

mod backward;
mod camera;
pub mod naive;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gaussian_map::{sh, Gaussian3D, GaussianMap};
use crate::motion::Pose;
use crate::{Error, Result};

pub use backward::{backward, CameraGradients};
pub use camera::CameraIntrinsics;

pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];
pub const MAX_ALPHA: f64 = 0.99;
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
pub const COV2D_REGULARIZATION: f64 = 0.3;

fn default_cutoff_sigma() -> f64 {
    3.0
}

fn default_tile_size() -> usize {
    16
}

fn default_log_floor() -> f64 {
    1e-3
}

/// Rendering knobs shared by the forward and backward passes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RasterSettings {
    /// Support radius of a splat in standard deviations (Mahalanobis units).
    #[serde(default = "default_cutoff_sigma")]
    pub cutoff_sigma: f64,
    #[serde(default = "default_tile_size")]
    pub tile_size: usize,
    /// Minimum luma before taking the log.
    #[serde(default = "default_log_floor")]
    pub log_floor: f64,
}

impl Default for RasterSettings {
    fn default() -> Self {
        Self {
            cutoff_sigma: default_cutoff_sigma(),
            tile_size: default_tile_size(),
            log_floor: default_log_floor(),
        }
    }
}

impl RasterSettings {
    /// Wide support so truncation jumps sit far below finite-difference noise.
    pub fn smooth() -> Self {
        Self {
            cutoff_sigma: 8.0,
            ..Self::default()
        }
    }
}

/// A gaussian projected into the image plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Splat2D {
    pub mean2d: Vector2<f64>,
    /// Regularized image covariance in pixels².
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d`.
    pub conic: Matrix2<f64>,
    pub depth: f64,
    pub color: [f64; 3],
    pub intensity: f64,
    pub opacity: f64,
    pub source_index: usize,
    /// Camera-frame mean.
    pub cam_point: Vector3<f64>,
    /// Camera-frame 3D covariance `R Σ Rᵀ`.
    pub cov_cam: Matrix3<f64>,
    /// Inclusive pixel bounding box `(x0, y0, x1, y1)` of the support ellipse.
    pub bbox: (usize, usize, usize, usize),
}

/// EWA Jacobian of the pinhole projection at a camera-frame point.
pub fn projection_jacobian(p: &Vector3<f64>, intr: &CameraIntrinsics) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    Matrix2x3::new(
        intr.fx * iz,
        0.0,
        -intr.fx * p.x * iz2,
        0.0,
        intr.fy * iz,
        -intr.fy * p.y * iz2,
    )
}

/// Image covariance `J R Σ Rᵀ Jᵀ` before regularization.
pub fn projected_covariance(
    g: &Gaussian3D,
    pose: &Pose,
    intr: &CameraIntrinsics,
) -> (Vector3<f64>, Matrix2<f64>) {
    let (p, cov_cam) = camera_frame(g, pose);
    let j = projection_jacobian(&p, intr);
    (p, j * cov_cam * j.transpose())
}

fn camera_frame(g: &Gaussian3D, pose: &Pose) -> (Vector3<f64>, Matrix3<f64>) {
    let p = pose.transform_point(&g.mean.into()).coords;
    let w = pose.rotation.to_rotation_matrix().into_inner();
    (p, w * g.covariance() * w.transpose())
}

/// Project one gaussian; `None` when it is behind the near plane or its
/// support ellipse misses the image.
pub fn project_gaussian(
    g: &Gaussian3D,
    index: usize,
    pose: &Pose,
    intr: &CameraIntrinsics,
    settings: &RasterSettings,
) -> Option<Splat2D> {
    let (p, cov_cam) = camera_frame(g, pose);
    if p.z <= intr.near_clip {
        return None;
    }
    let j = projection_jacobian(&p, intr);
    let raw = j * cov_cam * j.transpose();
    let cov2d = raw + Matrix2::identity() * COV2D_REGULARIZATION;
    let det = cov2d.determinant();
    if !(det > 0.0) {
        return None;
    }
    let conic = Matrix2::new(cov2d[(1, 1)], -cov2d[(0, 1)], -cov2d[(1, 0)], cov2d[(0, 0)]) / det;
    let mean2d = Vector2::new(intr.fx * p.x / p.z + intr.cx, intr.fy * p.y / p.z + intr.cy);

    let r = settings.cutoff_sigma;
    let rx = r * cov2d[(0, 0)].sqrt();
    let ry = r * cov2d[(1, 1)].sqrt();
    let x0 = (mean2d.x - rx).ceil().max(0.0);
    let y0 = (mean2d.y - ry).ceil().max(0.0);
    let x1 = (mean2d.x + rx).floor().min(intr.width as f64 - 1.0);
    let y1 = (mean2d.y + ry).floor().min(intr.height as f64 - 1.0);
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }

    let rot = pose.rotation.to_rotation_matrix();
    let center = -(rot.transpose() * pose.translation.vector);
    let dir = (g.mean - center).normalize();
    let color = sh::eval_unchecked(&g.sh, &dir);
    let intensity = LUMA[0] * color[0] + LUMA[1] * color[1] + LUMA[2] * color[2];

    Some(Splat2D {
        mean2d,
        cov2d,
        conic,
        depth: p.z,
        color,
        intensity,
        opacity: g.opacity,
        source_index: index,
        cam_point: p,
        cov_cam,
        bbox: (x0 as usize, y0 as usize, x1 as usize, y1 as usize),
    })
}

/// Project every gaussian and return the visible splats sorted front to back.
pub(crate) fn project_all(
    map: &GaussianMap,
    pose: &Pose,
    intr: &CameraIntrinsics,
    settings: &RasterSettings,
) -> Vec<Splat2D> {
    let mut splats: Vec<Splat2D> = map
        .gaussians()
        .par_iter()
        .enumerate()
        .filter_map(|(i, g)| project_gaussian(g, i, pose, intr, settings))
        .collect();
    splats.sort_by(|a, b| {
        a.depth
            .total_cmp(&b.depth)
            .then(a.source_index.cmp(&b.source_index))
    });
    splats
}

/// Truncated gaussian falloff, shifted so it reaches zero at the support
/// boundary. A hard cut would make every splat edge a jump in the image.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Falloff {
    cutoff2: f64,
    floor: f64,
    gain: f64,
}

impl Falloff {
    pub(crate) fn new(cutoff_sigma: f64) -> Self {
        let cutoff2 = cutoff_sigma * cutoff_sigma;
        let floor = (-0.5 * cutoff2).exp();
        Self {
            cutoff2,
            floor,
            gain: 1.0 / (1.0 - floor),
        }
    }

    /// Opacity-weighted falloff of a splat at a pixel before clamping, its
    /// derivative with respect to the exponent `−m/2`, and the offsets from
    /// the splat center. `None` outside the support ellipse.
    #[inline]
    pub(crate) fn alpha(&self, s: &Splat2D, px: f64, py: f64) -> Option<(f64, f64, f64, f64)> {
        let dx = px - s.mean2d.x;
        let dy = py - s.mean2d.y;
        let m = s.conic[(0, 0)] * dx * dx + 2.0 * s.conic[(0, 1)] * dx * dy + s.conic[(1, 1)] * dy * dy;
        if m >= self.cutoff2 {
            return None;
        }
        let g = (-0.5 * m).exp();
        let k = s.opacity * self.gain;
        Some((k * (g - self.floor), k * g, dx, dy))
    }
}

/// One blended splat at one pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contribution {
    /// Index into [`RenderedImage::splats`].
    pub splat: u32,
    pub alpha: f64,
    /// Transmittance in front of this splat.
    pub transmittance: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PixelBlend {
    pub start: usize,
    pub len: usize,
    pub final_transmittance: f64,
}

/// Forward render output with the records the backward pass replays.
#[derive(Clone, Debug)]
pub struct RenderedImage {
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
    pub settings: RasterSettings,
    /// `ln(max(luma, log_floor))`, shape `(height, width)`.
    pub log_intensity: Array2<f64>,
    /// Blended luma, shape `(height, width)`.
    pub intensity: Array2<f64>,
    /// Blended RGB, row-major.
    pub color: Vec<[f64; 3]>,
    pub splats: Vec<Splat2D>,
    /// Row-major per-pixel blend ranges into `contributions`.
    pub pixels: Vec<PixelBlend>,
    pub contributions: Vec<Contribution>,
    pub map_len: usize,
}

impl RenderedImage {
    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    /// Recompute the luma of every pixel from its blend records.
    pub fn replay_intensity(&self) -> Array2<f64> {
        let w = self.width();
        Array2::from_shape_fn((self.height(), w), |(y, x)| {
            let px = &self.pixels[y * w + x];
            self.contributions[px.start..px.start + px.len]
                .iter()
                .map(|c| self.splats[c.splat as usize].intensity * c.alpha * c.transmittance)
                .sum()
        })
    }
}

struct TileOutput {
    pixels: Vec<(usize, PixelBlend, f64, [f64; 3])>,
    contributions: Vec<Contribution>,
}

/// Tile-based forward render.
pub fn render(
    map: &GaussianMap,
    pose: &Pose,
    intr: &CameraIntrinsics,
    settings: &RasterSettings,
) -> Result<RenderedImage> {
    if map.is_empty() {
        return Err(Error::EmptyMap);
    }
    intr.validate()?;
    if settings.tile_size == 0 {
        return Err(Error::Config("tile size must be positive".into()));
    }
    let splats = project_all(map, pose, intr, settings);

    let ts = settings.tile_size;
    let tiles_x = intr.width.div_ceil(ts);
    let tiles_y = intr.height.div_ceil(ts);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (k, s) in splats.iter().enumerate() {
        let (x0, y0, x1, y1) = s.bbox;
        for ty in y0 / ts..=y1 / ts {
            for tx in x0 / ts..=x1 / ts {
                bins[ty * tiles_x + tx].push(k as u32);
            }
        }
    }

    let falloff = Falloff::new(settings.cutoff_sigma);
    let outputs: Vec<TileOutput> = bins
        .par_iter()
        .enumerate()
        .map(|(tile, list)| {
            let (tx, ty) = (tile % tiles_x, tile / tiles_x);
            let mut out = TileOutput {
                pixels: Vec::with_capacity(ts * ts),
                contributions: Vec::new(),
            };
            for y in ty * ts..((ty + 1) * ts).min(intr.height) {
                for x in tx * ts..((tx + 1) * ts).min(intr.width) {
                    let start = out.contributions.len();
                    let mut t = 1.0;
                    let mut lum = 0.0;
                    let mut rgb = [0.0; 3];
                    for &k in list {
                        let s = &splats[k as usize];
                        let Some((a, ..)) = falloff.alpha(s, x as f64, y as f64) else {
                            continue;
                        };
                        let alpha = a.min(MAX_ALPHA);
                        let next_t = t * (1.0 - alpha);
                        if next_t < MIN_TRANSMITTANCE {
                            break;
                        }
                        let w = alpha * t;
                        lum += s.intensity * w;
                        for c in 0..3 {
                            rgb[c] += s.color[c] * w;
                        }
                        out.contributions.push(Contribution {
                            splat: k,
                            alpha,
                            transmittance: t,
                        });
                        t = next_t;
                    }
                    let blend = PixelBlend {
                        start,
                        len: out.contributions.len() - start,
                        final_transmittance: t,
                    };
                    out.pixels.push((y * intr.width + x, blend, lum, rgb));
                }
            }
            out
        })
        .collect();

    let n = intr.pixel_count();
    let mut pixels = vec![PixelBlend::default(); n];
    let mut intensity = Array2::zeros((intr.height, intr.width));
    let mut color = vec![[0.0; 3]; n];
    let mut contributions = Vec::with_capacity(outputs.iter().map(|o| o.contributions.len()).sum());
    for out in outputs {
        let offset = contributions.len();
        for (idx, mut blend, lum, rgb) in out.pixels {
            blend.start += offset;
            pixels[idx] = blend;
            intensity[(idx / intr.width, idx % intr.width)] = lum;
            color[idx] = rgb;
        }
        contributions.extend(out.contributions);
    }
    let floor = settings.log_floor;
    let log_intensity = intensity.mapv(|v: f64| v.max(floor).ln());

    Ok(RenderedImage {
        pose: *pose,
        intrinsics: *intr,
        settings: *settings,
        log_intensity,
        intensity,
        color,
        splats,
        pixels,
        contributions,
        map_len: map.len(),
    })
}
