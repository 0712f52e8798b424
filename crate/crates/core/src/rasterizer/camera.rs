use serde::{Deserialize, Serialize};

use crate::{Error, Result};

fn default_near_clip() -> f64 {
    0.05
}

/// Pinhole intrinsics. Pixel `(x, y)` is sampled at image coordinate `(x, y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_near_clip")]
    pub near_clip: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            near_clip: default_near_clip(),
        }
    }

    /// Centered principal point for a given focal length.
    pub fn centered(focal: f64, width: usize, height: usize) -> Self {
        Self::new(
            focal,
            focal,
            0.5 * (width as f64 - 1.0),
            0.5 * (height as f64 - 1.0),
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Config("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("image size must be positive".into()));
        }
        if self.near_clip <= 0.0 {
            return Err(Error::Config("near clip must be positive".into()));
        }
        Ok(())
    }

    /// Intrinsics of pyramid level `level` (each level halves the resolution).
    ///
    /// Coarse pixel `k` covers fine pixels `[k·2^l, (k+1)·2^l)`, matching
    /// block average pooling.
    pub fn at_level(&self, level: usize) -> Self {
        let f = (1usize << level) as f64;
        Self {
            fx: self.fx / f,
            fy: self.fy / f,
            cx: (self.cx + 0.5) / f - 0.5,
            cy: (self.cy + 0.5) / f - 0.5,
            width: self.width >> level,
            height: self.height >> level,
            near_clip: self.near_clip,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}
