//! 8-bit image dumps for debugging.
//!
//! Intensity images map `[0, 1]` linearly onto `[0, 255]` with clamping.
//! Signed images map `[-m, m]` onto `[0, 255]`, where `m` is the largest
//! absolute value, so zero lands on mid gray (128).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::{GrayImage, ImageFormat, RgbImage};
use ndarray::Array2;

use crate::{Error, Result};

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Quantize an intensity image in `[0, 1]`.
pub fn intensity_to_gray(values: &Array2<f64>) -> Vec<u8> {
    values.iter().map(|&v| quantize(v)).collect()
}

/// Quantize a signed image symmetrically around mid gray.
pub fn signed_to_gray(values: &Array2<f64>) -> Vec<u8> {
    let m = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    values
        .iter()
        .map(|&v| if m > 0.0 { quantize(0.5 + 0.5 * v / m) } else { 128 })
        .collect()
}

pub fn save_gray_png(path: &Path, width: usize, height: usize, pixels: Vec<u8>) -> Result<()> {
    let img = GrayImage::from_raw(width as u32, height as u32, pixels)
        .ok_or_else(|| Error::Image("buffer does not match image size".into()))?;
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

pub fn save_rgb_png(path: &Path, width: usize, height: usize, rgb: &[[f64; 3]]) -> Result<()> {
    let raw: Vec<u8> = rgb.iter().flat_map(|c| c.map(quantize)).collect();
    let img = RgbImage::from_raw(width as u32, height as u32, raw)
        .ok_or_else(|| Error::Image("buffer does not match image size".into()))?;
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

/// Binary PGM (`P5`).
pub fn save_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::Image("buffer does not match image size".into()));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write!(w, "P5\n{width} {height}\n255\n")
        .and_then(|_| w.write_all(pixels))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Dump a signed image as PNG or PGM depending on the extension.
pub fn save_signed(path: &Path, values: &Array2<f64>) -> Result<()> {
    let (h, w) = values.dim();
    let px = signed_to_gray(values);
    if path.extension().is_some_and(|e| e == "pgm") {
        save_pgm(path, w, h, &px)
    } else {
        save_gray_png(path, w, h, px)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signed_mapping_is_symmetric() {
        let a = Array2::from_shape_vec((1, 3), vec![-2.0, 0.0, 2.0]).unwrap();
        assert_eq!(signed_to_gray(&a), vec![0, 128, 255]);
        assert_eq!(signed_to_gray(&Array2::zeros((2, 2))), vec![128; 4]);
    }

    #[test]
    fn intensity_mapping_clamps() {
        let a = Array2::from_shape_vec((1, 4), vec![-1.0, 0.0, 0.5, 3.0]).unwrap();
        assert_eq!(intensity_to_gray(&a), vec![0, 0, 128, 255]);
    }

    #[test]
    fn pgm_and_png_files() {
        let dir = tempfile::tempdir().unwrap();
        let a = Array2::from_shape_fn((4, 5), |(y, x)| x as f64 - y as f64);
        let pgm = dir.path().join("a.pgm");
        save_signed(&pgm, &a).unwrap();
        let bytes = std::fs::read(&pgm).unwrap();
        assert!(bytes.starts_with(b"P5\n5 4\n255\n"));
        assert_eq!(bytes.len(), 11 + 20);
        let png = dir.path().join("a.png");
        save_signed(&png, &a).unwrap();
        let img = image::open(&png).unwrap().to_luma8();
        assert_eq!(img.into_raw(), signed_to_gray(&a));
    }
}
