//! Parametric test scenes.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sh::{coeffs_for_degree, rgb_to_dc, MAX_SH_DEGREE};
use super::{Gaussian3D, GaussianMap};
use crate::{Error, Result};

fn default_opacity() -> f64 {
    0.9
}

fn default_blob_ratio() -> f64 {
    0.6
}

/// A scene description, usually read from the `[scene]` table of a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneDescriptor {
    /// Fronto-parallel checkerboard of flat splats at depth `depth`.
    Checker {
        nx: usize,
        ny: usize,
        spacing: f64,
        depth: f64,
        #[serde(default = "default_checker_colors")]
        colors: [f64; 2],
    },
    /// Fronto-parallel wall of overlapping blobs with random gray levels.
    Wall {
        nx: usize,
        ny: usize,
        spacing: f64,
        depth: f64,
        seed: u64,
        #[serde(default)]
        center: [f64; 2],
        /// Blob standard deviation as a fraction of the grid spacing.
        #[serde(default = "default_blob_ratio")]
        blob_ratio: f64,
        #[serde(default = "default_opacity")]
        opacity: f64,
        /// Half-width of a uniform depth offset per blob. Any value above
        /// zero breaks the depth ties that would otherwise reorder the whole
        /// wall under the slightest rotation.
        #[serde(default)]
        depth_jitter: f64,
    },
    /// Randomly placed anisotropic splats inside a box in front of the origin.
    Random {
        count: usize,
        sh_degree: usize,
        seed: u64,
        extent: f64,
        depth: f64,
    },
    /// Explicit list of view-independent splats.
    Explicit { gaussians: Vec<SplatSpec> },
}

fn default_checker_colors() -> [f64; 2] {
    [0.2, 0.8]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplatSpec {
    pub mean: [f64; 3],
    pub scale: [f64; 3],
    /// `(w, x, y, z)`; identity when omitted.
    #[serde(default = "identity_quat")]
    pub rotation: [f64; 4],
    pub opacity: f64,
    pub gray: f64,
}

fn identity_quat() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

fn grid_origin(n: usize, spacing: f64, center: f64) -> f64 {
    center - 0.5 * (n.saturating_sub(1)) as f64 * spacing
}

/// Build a map from a descriptor. Deterministic for a fixed seed.
pub fn make_synthetic_map(desc: &SceneDescriptor) -> Result<GaussianMap> {
    let gaussians = match desc {
        SceneDescriptor::Checker {
            nx,
            ny,
            spacing,
            depth,
            colors,
        } => {
            let (x0, y0) = (grid_origin(*nx, *spacing, 0.0), grid_origin(*ny, *spacing, 0.0));
            let mut out = Vec::with_capacity(nx * ny);
            for j in 0..*ny {
                for i in 0..*nx {
                    let gray = colors[(i + j) % 2];
                    out.push(Gaussian3D {
                        mean: Vector3::new(x0 + i as f64 * spacing, y0 + j as f64 * spacing, *depth),
                        rotation: UnitQuaternion::identity(),
                        scale: Vector3::new(0.5 * spacing, 0.5 * spacing, 0.05 * spacing),
                        opacity: 0.9,
                        sh: vec![[rgb_to_dc(gray); 3]],
                    });
                }
            }
            out
        }
        SceneDescriptor::Wall {
            nx,
            ny,
            spacing,
            depth,
            seed,
            center,
            blob_ratio,
            opacity,
            depth_jitter,
        } => {
            if *spacing <= 0.0 || *blob_ratio <= 0.0 {
                return Err(Error::Config("wall spacing and blob_ratio must be positive".into()));
            }
            if !(*depth_jitter >= 0.0 && *depth_jitter < *depth) {
                return Err(Error::Config("wall depth_jitter must lie in [0, depth)".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            // Separate stream, so the jitter leaves the gray levels alone.
            let mut depth_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
            let (x0, y0) = (
                grid_origin(*nx, *spacing, center[0]),
                grid_origin(*ny, *spacing, center[1]),
            );
            let sigma = blob_ratio * spacing;
            let mut out = Vec::with_capacity(nx * ny);
            for j in 0..*ny {
                for i in 0..*nx {
                    let gray = rng.random_range(0.1..0.9);
                    let z = if *depth_jitter > 0.0 {
                        depth + depth_rng.random_range(-*depth_jitter..*depth_jitter)
                    } else {
                        *depth
                    };
                    out.push(Gaussian3D {
                        mean: Vector3::new(x0 + i as f64 * spacing, y0 + j as f64 * spacing, z),
                        rotation: UnitQuaternion::identity(),
                        scale: Vector3::new(sigma, sigma, 0.1 * sigma),
                        opacity: *opacity,
                        sh: vec![[rgb_to_dc(gray); 3]],
                    });
                }
            }
            out
        }
        SceneDescriptor::Random {
            count,
            sh_degree,
            seed,
            extent,
            depth,
        } => {
            if *sh_degree > MAX_SH_DEGREE {
                return Err(Error::Config(format!("SH degree {sh_degree} above {MAX_SH_DEGREE}")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            (0..*count)
                .map(|_| {
                    let mean = Vector3::new(
                        rng.random_range(-extent..*extent),
                        rng.random_range(-extent..*extent),
                        depth + rng.random_range(-0.5 * extent..0.5 * extent),
                    );
                    let rotation = UnitQuaternion::new_normalize(Quaternion::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ));
                    let scale = Vector3::new(
                        rng.random_range(0.02..0.3),
                        rng.random_range(0.02..0.3),
                        rng.random_range(0.02..0.3),
                    );
                    let mut sh = vec![[0.0; 3]; coeffs_for_degree(*sh_degree)];
                    sh[0] = [0.0; 3].map(|_: f64| rgb_to_dc(rng.random_range(0.1..0.9)));
                    for c in sh.iter_mut().skip(1) {
                        *c = [0.0; 3].map(|_: f64| rng.random_range(-0.2..0.2));
                    }
                    Gaussian3D {
                        mean,
                        rotation,
                        scale,
                        opacity: rng.random_range(0.2..0.9),
                        sh,
                    }
                })
                .collect()
        }
        SceneDescriptor::Explicit { gaussians } => gaussians
            .iter()
            .map(|s| Gaussian3D {
                mean: Vector3::from(s.mean),
                rotation: UnitQuaternion::new_normalize(Quaternion::new(
                    s.rotation[0],
                    s.rotation[1],
                    s.rotation[2],
                    s.rotation[3],
                )),
                scale: Vector3::from(s.scale),
                opacity: s.opacity,
                sh: vec![[rgb_to_dc(s.gray); 3]],
            })
            .collect(),
    };
    GaussianMap::new(gaussians)
}
