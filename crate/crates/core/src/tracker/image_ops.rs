//! Blur, pooling and masking on `(height, width)` arrays.
//!
//! The blur is separable with a `3σ` truncated kernel that is renormalized
//! where it overhangs the border, so constant images stay constant. Its
//! adjoint is provided for the backward pass.

use ndarray::{Array2, ArrayView1, ArrayViewMut1, Axis, Zip};

fn kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect()
}

/// Sum of the kernel taps that land inside `[0, n)` around position `i`.
fn border_norm(k: &[f64], i: usize, n: usize) -> f64 {
    let r = k.len() / 2;
    let lo = r.saturating_sub(i);
    let hi = (n - 1 - i + r).min(k.len() - 1);
    k[lo..=hi].iter().sum()
}

fn convolve(src: ArrayView1<f64>, mut dst: ArrayViewMut1<f64>, k: &[f64]) {
    let n = src.len();
    let r = k.len() / 2;
    for i in 0..n {
        let lo = i.saturating_sub(r);
        let hi = (i + r).min(n - 1);
        let mut acc = 0.0;
        for j in lo..=hi {
            acc += k[j + r - i] * src[j];
        }
        dst[i] = acc / border_norm(k, i, n);
    }
}

fn convolve_adjoint(src: ArrayView1<f64>, mut dst: ArrayViewMut1<f64>, k: &[f64]) {
    let n = src.len();
    let r = k.len() / 2;
    dst.fill(0.0);
    for i in 0..n {
        let s = src[i] / border_norm(k, i, n);
        let lo = i.saturating_sub(r);
        let hi = (i + r).min(n - 1);
        for j in lo..=hi {
            dst[j] += k[j + r - i] * s;
        }
    }
}

fn separable(img: &Array2<f64>, sigma: f64, adjoint: bool) -> Array2<f64> {
    if !(sigma > 0.0) {
        return img.clone();
    }
    let k = kernel(sigma);
    let op = if adjoint { convolve_adjoint } else { convolve };
    let mut tmp = Array2::zeros(img.dim());
    for (src, dst) in img.lanes(Axis(1)).into_iter().zip(tmp.lanes_mut(Axis(1))) {
        op(src, dst, &k);
    }
    let mut out = Array2::zeros(img.dim());
    for (src, dst) in tmp.lanes(Axis(0)).into_iter().zip(out.lanes_mut(Axis(0))) {
        op(src, dst, &k);
    }
    out
}

/// Gaussian blur with standard deviation `sigma` pixels; `sigma <= 0` is
/// the identity.
pub fn blur(img: &Array2<f64>, sigma: f64) -> Array2<f64> {
    separable(img, sigma, false)
}

/// Transpose of [`blur`].
pub fn blur_adjoint(img: &Array2<f64>, sigma: f64) -> Array2<f64> {
    separable(img, sigma, true)
}

/// Block average over `2^level × 2^level` pixels; trailing partial blocks are
/// dropped.
pub fn average_pool(img: &Array2<f64>, level: usize) -> Array2<f64> {
    if level == 0 {
        return img.clone();
    }
    let f = 1usize << level;
    let (h, w) = img.dim();
    let inv = 1.0 / (f * f) as f64;
    Array2::from_shape_fn((h >> level, w >> level), |(y, x)| {
        img.slice(ndarray::s![y * f..(y + 1) * f, x * f..(x + 1) * f]).sum() * inv
    })
}

/// Transpose of [`average_pool`] onto a `(height, width)` grid; pixels in
/// dropped partial blocks receive zero.
pub fn average_pool_adjoint(img: &Array2<f64>, level: usize, shape: (usize, usize)) -> Array2<f64> {
    if level == 0 {
        return img.clone();
    }
    let f = 1usize << level;
    let inv = 1.0 / (f * f) as f64;
    let (ph, pw) = img.dim();
    Array2::from_shape_fn(shape, |(y, x)| {
        let (by, bx) = (y / f, x / f);
        if by < ph && bx < pw {
            img[(by, bx)] * inv
        } else {
            0.0
        }
    })
}

/// Block "any" over `2^level × 2^level` pixels.
pub fn max_pool_mask(mask: &Array2<bool>, level: usize) -> Array2<bool> {
    if level == 0 {
        return mask.clone();
    }
    let f = 1usize << level;
    let (h, w) = mask.dim();
    Array2::from_shape_fn((h >> level, w >> level), |(y, x)| {
        mask.slice(ndarray::s![y * f..(y + 1) * f, x * f..(x + 1) * f]).iter().any(|&b| b)
    })
}

/// Pixels with `|ΔI_e| ≥ threshold`, dilated by a square of half-width
/// `dilation`.
pub fn event_mask(delta_ie: &Array2<f64>, threshold: f64, dilation: usize) -> Array2<bool> {
    let seed = delta_ie.mapv(|v| v.abs() >= threshold);
    if dilation == 0 {
        return seed;
    }
    let (h, w) = seed.dim();
    let mut rows = Array2::from_elem((h, w), false);
    Zip::indexed(&mut rows).for_each(|(y, x), out| {
        let lo = x.saturating_sub(dilation);
        let hi = (x + dilation).min(w - 1);
        *out = (lo..=hi).any(|j| seed[(y, j)]);
    });
    Array2::from_shape_fn((h, w), |(y, x)| {
        let lo = y.saturating_sub(dilation);
        let hi = (y + dilation).min(h - 1);
        (lo..=hi).any(|i| rows[(i, x)])
    })
}

/// Pool then blur: the pipeline applied to event images at a pyramid level.
pub fn preprocess(img: &Array2<f64>, level: usize, sigma: f64) -> Array2<f64> {
    blur(&average_pool(img, level), sigma)
}
