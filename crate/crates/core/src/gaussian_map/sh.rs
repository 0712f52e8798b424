//! Real spherical harmonics in the 3DGS basis ordering and sign convention.

use nalgebra::Vector3;

use crate::{Error, Result};

pub const MAX_SH_DEGREE: usize = 3;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub const fn coeffs_for_degree(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

pub fn degree_for_coeffs(count: usize) -> Option<usize> {
    (0..=MAX_SH_DEGREE).find(|&d| coeffs_for_degree(d) == count)
}

/// DC coefficient producing `value` for a degree-0 splat.
pub fn rgb_to_dc(value: f64) -> f64 {
    (value - 0.5) / SH_C0
}

/// Basis functions up to `degree` for a unit direction.
pub fn basis(degree: usize, dir: &Vector3<f64>) -> [f64; 16] {
    let mut b = [0.0; 16];
    b[0] = SH_C0;
    if degree == 0 {
        return b;
    }
    let (x, y, z) = (dir.x, dir.y, dir.z);
    b[1] = -SH_C1 * y;
    b[2] = SH_C1 * z;
    b[3] = -SH_C1 * x;
    if degree == 1 {
        return b;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    b[4] = SH_C2[0] * xy;
    b[5] = SH_C2[1] * yz;
    b[6] = SH_C2[2] * (2.0 * zz - xx - yy);
    b[7] = SH_C2[3] * xz;
    b[8] = SH_C2[4] * (xx - yy);
    if degree == 2 {
        return b;
    }
    b[9] = SH_C3[0] * y * (3.0 * xx - yy);
    b[10] = SH_C3[1] * xy * z;
    b[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
    b[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    b[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
    b[14] = SH_C3[5] * z * (xx - yy);
    b[15] = SH_C3[6] * x * (xx - 3.0 * yy);
    b
}

/// View-dependent RGB color: SH expansion plus the 0.5 offset, clamped at zero.
pub fn sh_to_color(degree: usize, coeffs: &[[f64; 3]], view_dir: &Vector3<f64>) -> Result<[f64; 3]> {
    if degree > MAX_SH_DEGREE || coeffs.len() != coeffs_for_degree(degree) {
        return Err(Error::Config(format!(
            "SH degree {degree} needs {} coefficients, got {}",
            coeffs_for_degree(degree.min(MAX_SH_DEGREE)),
            coeffs.len()
        )));
    }
    Ok(eval_unchecked(coeffs, view_dir))
}

/// Evaluation without the degree check; the degree is implied by `coeffs.len()`.
pub(crate) fn eval_unchecked(coeffs: &[[f64; 3]], view_dir: &Vector3<f64>) -> [f64; 3] {
    let degree = degree_for_coeffs(coeffs.len()).unwrap_or(0);
    let b = basis(degree, view_dir);
    let mut rgb = [0.5; 3];
    for (k, c) in coeffs.iter().enumerate() {
        for ch in 0..3 {
            rgb[ch] += b[k] * c[ch];
        }
    }
    rgb.map(|v| v.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    /// Associated Legendre P_l^m(x) with the Condon-Shortley phase.
    fn legendre(l: usize, m: usize, x: f64) -> f64 {
        let mut pmm = 1.0;
        let somx2 = ((1.0 - x) * (1.0 + x)).sqrt();
        let mut fact = 1.0;
        for _ in 0..m {
            pmm *= -fact * somx2;
            fact += 2.0;
        }
        if l == m {
            return pmm;
        }
        let mut pmmp1 = x * (2 * m + 1) as f64 * pmm;
        if l == m + 1 {
            return pmmp1;
        }
        let mut pll = 0.0;
        for ll in (m + 2)..=l {
            pll = ((2 * ll - 1) as f64 * x * pmmp1 - (ll + m - 1) as f64 * pmm) / (ll - m) as f64;
            pmm = pmmp1;
            pmmp1 = pll;
        }
        pll
    }

    /// Real SH from spherical coordinates, indexed l² + l + m.
    fn oracle_basis(l: usize, m: i64, dir: &Vector3<f64>) -> f64 {
        let theta = dir.z.clamp(-1.0, 1.0).acos();
        let phi = dir.y.atan2(dir.x);
        let am = m.unsigned_abs() as usize;
        let k = ((2 * l + 1) as f64 / (4.0 * PI) * factorial(l - am) / factorial(l + am)).sqrt();
        let p = legendre(l, am, theta.cos());
        match m.cmp(&0) {
            std::cmp::Ordering::Equal => k * p,
            std::cmp::Ordering::Greater => 2f64.sqrt() * k * p * (am as f64 * phi).cos(),
            std::cmp::Ordering::Less => 2f64.sqrt() * k * p * (am as f64 * phi).sin(),
        }
    }

    fn random_dir(rng: &mut ChaCha8Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if v.norm() > 0.1 {
                return v.normalize();
            }
        }
    }

    #[test]
    fn degree_zero_is_view_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let coeffs = [[0.0, 0.3, -0.2]];
        let reference = sh_to_color(0, &coeffs, &Vector3::z()).unwrap();
        assert_eq!(reference[0], 0.5);
        for _ in 0..20 {
            assert_eq!(sh_to_color(0, &coeffs, &random_dir(&mut rng)).unwrap(), reference);
        }
    }

    #[test]
    fn negative_values_clamp_to_zero() {
        let coeffs = [[rgb_to_dc(-0.4), rgb_to_dc(0.25), 0.0]];
        let c = sh_to_color(0, &coeffs, &Vector3::z()).unwrap();
        assert_eq!(c[0], 0.0);
        assert!((c[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn coefficient_mismatch_is_a_config_error() {
        assert!(matches!(
            sh_to_color(2, &[[0.0; 3]; 4], &Vector3::z()),
            Err(Error::Config(_))
        ));
        assert!(sh_to_color(4, &[[0.0; 3]; 25], &Vector3::z()).is_err());
    }

    #[test]
    fn degree_three_matches_legendre_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let coeffs: Vec<[f64; 3]> = (0..16)
            .map(|_| [0.0; 3].map(|_: f64| rng.random_range(-0.3..0.3)))
            .collect();
        for _ in 0..10 {
            let dir = random_dir(&mut rng);
            let mut oracle = [0.5; 3];
            for l in 0..=3usize {
                for m in -(l as i64)..=(l as i64) {
                    let idx = (l * l) as i64 + l as i64 + m;
                    let y = oracle_basis(l, m, &dir);
                    for ch in 0..3 {
                        oracle[ch] += y * coeffs[idx as usize][ch];
                    }
                }
            }
            let oracle = oracle.map(|v: f64| v.max(0.0));
            let got = sh_to_color(3, &coeffs, &dir).unwrap();
            for ch in 0..3 {
                assert!((got[ch] - oracle[ch]).abs() < 1e-9, "{got:?} vs {oracle:?}");
            }
        }
    }
}
