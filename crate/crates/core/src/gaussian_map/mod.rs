//! 3D Gaussian splat scenes.

mod ply;
pub mod sh;
pub mod synthetic;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use crate::{Error, Result};

pub use ply::{load_ply, read_ply, save_ply, write_ply};
pub use sh::{sh_to_color, MAX_SH_DEGREE};
pub use synthetic::{make_synthetic_map, SceneDescriptor};

/// A single splat primitive.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian3D {
    /// World-frame mean in meters.
    pub mean: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    /// Per-axis standard deviations in meters.
    pub scale: Vector3<f64>,
    /// Opacity in `[0, 1]`.
    pub opacity: f64,
    /// Spherical-harmonics coefficients, one RGB triple per basis function.
    pub sh: Vec<[f64; 3]>,
}

impl Gaussian3D {
    /// An isotropic, view-independent gaussian with the given gray level.
    pub fn isotropic(mean: Vector3<f64>, sigma: f64, opacity: f64, gray: f64) -> Self {
        Self {
            mean,
            rotation: UnitQuaternion::identity(),
            scale: Vector3::repeat(sigma),
            opacity,
            sh: vec![[sh::rgb_to_dc(gray); 3]],
        }
    }

    pub fn sh_degree(&self) -> Option<usize> {
        sh::degree_for_coeffs(self.sh.len())
    }

    /// World covariance `R · diag(s²) · Rᵀ`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation.to_rotation_matrix().into_inner();
        let s2 = Matrix3::from_diagonal(&self.scale.component_mul(&self.scale));
        r * s2 * r.transpose()
    }

    fn validate(&self, index: usize) -> Result<()> {
        let bad = |what: &str| Err(Error::Format(format!("gaussian {index}: {what}")));
        if !self.mean.iter().all(|v| v.is_finite()) {
            return bad("non-finite mean");
        }
        if !self.scale.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return bad("scales must be strictly positive");
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return bad("opacity outside [0, 1]");
        }
        if (self.rotation.quaternion().norm() - 1.0).abs() > 1e-6 {
            return bad("rotation quaternion is not unit norm");
        }
        if self.sh_degree().is_none() {
            return bad("unsupported number of SH coefficients");
        }
        Ok(())
    }
}

/// Axis-aligned bounds of the gaussian means.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Bounds {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// An immutable, validated collection of splats sharing one SH degree.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMap {
    gaussians: Vec<Gaussian3D>,
    sh_degree: usize,
    bounds: Bounds,
}

impl GaussianMap {
    pub fn new(gaussians: Vec<Gaussian3D>) -> Result<Self> {
        let first = gaussians.first().ok_or(Error::EmptyMap)?;
        let sh_degree = first
            .sh_degree()
            .ok_or_else(|| Error::Format("unsupported number of SH coefficients".into()))?;
        let mut min = first.mean;
        let mut max = first.mean;
        for (i, g) in gaussians.iter().enumerate() {
            g.validate(i)?;
            if g.sh.len() != first.sh.len() {
                return Err(Error::Format(format!(
                    "gaussian {i}: SH degree differs from the rest of the map"
                )));
            }
            min = min.inf(&g.mean);
            max = max.sup(&g.mean);
        }
        Ok(Self {
            gaussians,
            sh_degree,
            bounds: Bounds { min, max },
        })
    }

    pub fn gaussians(&self) -> &[Gaussian3D] {
        &self.gaussians
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn sh_degree(&self) -> usize {
        self.sh_degree
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }
}
