//! TUM trajectory files, first-pose alignment and absolute trajectory error.
//!
//! TUM lines are `t tx ty tz qx qy qz qw` and describe the camera-to-world
//! transform; trajectories in memory hold world-to-camera poses.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use nalgebra::{Isometry3, Quaternion, Translation3, UnitQuaternion};

use crate::motion::{rotation_angle, Pose};
use crate::trajectory::{PoseSample, Trajectory};
use crate::{Error, Result};

pub const DEFAULT_ALIGN_TOLERANCE: f64 = 0.05;
pub const DEFAULT_ASSOC_TOLERANCE: f64 = 0.01;

pub fn read_tum<R: BufRead>(reader: R, source: &Path) -> Result<Trajectory> {
    let mut traj = Trajectory::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = trimmed
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(source, lineno, "non-numeric field"))?;
        if v.len() != 8 {
            return Err(Error::parse(source, lineno, format!("expected 8 fields, found {}", v.len())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::parse(source, lineno, "non-finite value"));
        }
        let q = Quaternion::new(v[7], v[4], v[5], v[6]);
        let norm = q.norm();
        if norm < 1e-12 {
            return Err(Error::parse(source, lineno, "zero quaternion"));
        }
        if (norm - 1.0).abs() > 1e-6 {
            warn!("{}:{lineno}: quaternion norm {norm}, normalizing", source.display());
        }
        let twc = Isometry3::from_parts(
            Translation3::new(v[1], v[2], v[3]),
            UnitQuaternion::new_normalize(q),
        );
        traj.push(v[0], twc.inverse())
            .map_err(|_| Error::parse(source, lineno, format!("timestamp {} does not increase", v[0])))?;
    }
    Ok(traj)
}

pub fn load_tum(path: &Path) -> Result<Trajectory> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_tum(BufReader::new(file), path)
}

/// Values use the shortest representation that parses back exactly.
pub fn write_tum<W: Write>(mut w: W, traj: &Trajectory) -> std::io::Result<()> {
    for s in traj.samples() {
        let twc = s.pose.inverse();
        let t = twc.translation.vector;
        let q = twc.rotation.quaternion();
        writeln!(w, "{} {} {} {} {} {} {} {}", s.t, t.x, t.y, t.z, q.i, q.j, q.k, q.w)?;
    }
    w.flush()
}

pub fn save_tum(traj: &Trajectory, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_tum(BufWriter::new(file), traj).map_err(|e| Error::io(path, e))
}

/// Rigidly move `est` so its first pose equals the ground-truth pose
/// associated with it. The correction acts on the world frame.
pub fn align_first_pose(est: &Trajectory, gt: &Trajectory, tolerance: f64) -> Result<Trajectory> {
    let e0 = est.first().ok_or(Error::NoAssociation { tolerance })?;
    let g0 = gt.nearest(e0.t, tolerance).ok_or(Error::NoAssociation { tolerance })?;
    // T_wc' = T_wc,gt0 · T_wc,est0⁻¹ · T_wc  ⇔  T_cw' = T_cw · T_cw,est0⁻¹ · T_cw,gt0.
    let correction: Pose = e0.pose.inverse() * g0.pose;
    let mut out = Trajectory::new();
    for (i, s) in est.samples().iter().enumerate() {
        let pose = if i == 0 { g0.pose } else { s.pose * correction };
        out.push(s.t, pose)?;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseError {
    pub t: f64,
    pub position_cm: f64,
    pub orientation_deg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AteResult {
    pub position_rmse_cm: f64,
    pub orientation_rmse_deg: f64,
    pub errors: Vec<PoseError>,
}

impl AteResult {
    pub fn matched(&self) -> usize {
        self.errors.len()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,position_cm,orientation_deg")?;
        for e in &self.errors {
            writeln!(w, "{},{},{}", e.t, e.position_cm, e.orientation_deg)?;
        }
        w.flush()
    }
}

impl fmt::Display for AteResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "matched poses: {}", self.matched())?;
        writeln!(f, "ATE position RMSE: {:.2} cm", self.position_rmse_cm)?;
        write!(f, "ATE orientation RMSE: {:.2} deg", self.orientation_rmse_deg)
    }
}

/// Per-pose errors and their RMSE, associating each estimate with the
/// nearest ground-truth timestamp within `tolerance`.
pub fn ate(est: &Trajectory, gt: &Trajectory, tolerance: f64) -> Result<AteResult> {
    let errors: Vec<PoseError> = est
        .samples()
        .iter()
        .filter_map(|e| gt.nearest(e.t, tolerance).map(|g| pose_error(e, g)))
        .collect();
    if errors.is_empty() {
        return Err(Error::NoAssociation { tolerance });
    }
    let n = errors.len() as f64;
    let rms = |f: fn(&PoseError) -> f64| (errors.iter().map(|e| f(e).powi(2)).sum::<f64>() / n).sqrt();
    Ok(AteResult {
        position_rmse_cm: rms(|e| e.position_cm),
        orientation_rmse_deg: rms(|e| e.orientation_deg),
        errors,
    })
}

fn pose_error(est: &PoseSample, gt: &PoseSample) -> PoseError {
    let rel = est.pose.rotation * gt.pose.rotation.inverse();
    PoseError {
        t: est.t,
        position_cm: 100.0 * (est.center() - gt.center()).norm(),
        orientation_deg: rotation_angle(&rel).to_degrees(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::v2t;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::io::Cursor;

    fn rv(rng: &mut ChaCha8Rng, s: f64) -> Vector3<f64> {
        Vector3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
    }

    fn random_traj(rng: &mut ChaCha8Rng, n: usize) -> Trajectory {
        let samples = (0..n)
            .map(|i| PoseSample::new(i as f64 * 0.1, v2t(&rv(rng, 1.0), &rv(rng, 3.0))))
            .collect();
        Trajectory::from_samples(samples).unwrap()
    }

    fn parse(s: &str) -> Result<Trajectory> {
        read_tum(Cursor::new(s), Path::new("mem"))
    }

    #[test]
    fn identity_line() {
        let t = parse("# header\n0 0 0 0 0 0 0 1\n").unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.samples()[0].t, 0.0);
        assert_eq!(t.samples()[0].pose, Pose::identity());
    }

    #[test]
    fn file_stores_camera_to_world() {
        let t = parse("0 1 2 3 0 0 0 1\n").unwrap();
        assert_eq!(t.samples()[0].center(), Vector3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn non_unit_quaternion_is_normalized() {
        let t = parse("0 0 0 0 0 0 0 2\n").unwrap();
        assert_eq!(t.samples()[0].pose.rotation, UnitQuaternion::identity());
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        for (text, line) in [("0 0 0 0 0 0 0 1\n1 0 0\n", 2), ("0 0 0 0 0 0 0 1\n0 0 0 0 0 0 0 1\n", 2), ("x 0 0 0 0 0 0 1\n", 1)] {
            match parse(text) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let traj = random_traj(&mut rng, 50);
        let mut buf = Vec::new();
        write_tum(&mut buf, &traj).unwrap();
        let back = parse(std::str::from_utf8(&buf).unwrap()).unwrap();
        for (a, b) in traj.samples().iter().zip(back.samples()) {
            assert_eq!(a.t, b.t);
            assert!((a.pose.to_homogeneous() - b.pose.to_homogeneous()).abs().max() < 1e-9);
        }
    }

    #[test]
    fn alignment_removes_rigid_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gt = random_traj(&mut rng, 30);
        let same = align_first_pose(&gt, &gt, 0.05).unwrap();
        for (a, b) in same.samples().iter().zip(gt.samples()) {
            assert_eq!(a.t, b.t);
            assert!((a.pose.to_homogeneous() - b.pose.to_homogeneous()).abs().max() < 1e-12);
        }

        let offset = v2t(&rv(&mut rng, 2.0), &rv(&mut rng, 2.0));
        let moved = Trajectory::from_samples(gt.samples().iter().map(|s| PoseSample::new(s.t, s.pose * offset)).collect()).unwrap();
        let aligned = align_first_pose(&moved, &gt, 0.05).unwrap();
        for (a, b) in aligned.samples().iter().zip(gt.samples()) {
            assert!((a.pose.to_homogeneous() - b.pose.to_homogeneous()).abs().max() < 1e-12);
        }
        let again = align_first_pose(&aligned, &gt, 0.05).unwrap();
        assert_eq!(again.samples()[0].pose, gt.samples()[0].pose);
        for (a, b) in again.samples().iter().zip(aligned.samples()) {
            assert!((a.pose.to_homogeneous() - b.pose.to_homogeneous()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn alignment_zeroes_first_error_under_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gt = random_traj(&mut rng, 20);
        let offset = v2t(&rv(&mut rng, 2.0), &rv(&mut rng, 2.0));
        let noisy = Trajectory::from_samples(
            gt.samples().iter().map(|s| PoseSample::new(s.t, v2t(&rv(&mut rng, 0.01), &rv(&mut rng, 0.01)) * s.pose * offset)).collect(),
        )
        .unwrap();
        let aligned = align_first_pose(&noisy, &gt, 0.05).unwrap();
        let res = ate(&aligned, &gt, 0.01).unwrap();
        assert!(res.errors[0].position_cm < 1e-10);
        assert!(res.errors[0].orientation_deg < 1e-10);
    }

    #[test]
    fn alignment_needs_association() {
        let gt = Trajectory::from_samples(vec![PoseSample::new(1.0, Pose::identity())]).unwrap();
        let est = Trajectory::from_samples(vec![PoseSample::new(0.0, Pose::identity())]).unwrap();
        assert!(matches!(align_first_pose(&est, &gt, 0.05), Err(Error::NoAssociation { .. })));
        assert!(matches!(ate(&est, &gt, 0.01), Err(Error::NoAssociation { .. })));
    }

    #[test]
    fn constant_offset_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gt = random_traj(&mut rng, 40);
        let zero = ate(&gt, &gt, 0.01).unwrap();
        assert!(zero.position_rmse_cm < 1e-10 && zero.orientation_rmse_deg < 1e-10);

        // Move every camera center 1 cm along world x.
        let shifted = Trajectory::from_samples(
            gt.samples()
                .iter()
                .map(|s| {
                    let mut twc = s.pose.inverse();
                    twc.translation.vector.x += 0.01;
                    PoseSample::new(s.t, twc.inverse())
                })
                .collect(),
        )
        .unwrap();
        let res = ate(&shifted, &gt, 0.01).unwrap();
        assert!((res.position_rmse_cm - 1.0).abs() < 1e-9);
        assert!(res.orientation_rmse_deg < 1e-6);
    }

    #[test]
    fn rmse_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt = random_traj(&mut rng, 100);
        let est = random_traj(&mut rng, 100);
        let res = ate(&est, &gt, 0.01).unwrap();
        let mut sp = 0.0;
        let mut so = 0.0;
        for (e, g) in est.samples().iter().zip(gt.samples()) {
            let ce = e.pose.inverse().to_homogeneous();
            let cg = g.pose.inverse().to_homogeneous();
            let dp = (ce.fixed_view::<3, 1>(0, 3) - cg.fixed_view::<3, 1>(0, 3)).norm() * 100.0;
            let r = ce.fixed_view::<3, 3>(0, 0) * cg.fixed_view::<3, 3>(0, 0).transpose();
            let ang = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees();
            sp += dp * dp;
            so += ang * ang;
        }
        assert!((res.position_rmse_cm - (sp / 100.0).sqrt()).abs() < 1e-12);
        assert!((res.orientation_rmse_deg - (so / 100.0).sqrt()).abs() < 1e-6);
    }

    #[test]
    fn invariant_to_common_rigid_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let gt = random_traj(&mut rng, 30);
        let est = random_traj(&mut rng, 30);
        let x = v2t(&rv(&mut rng, 2.0), &rv(&mut rng, 2.0));
        let apply = |t: &Trajectory| Trajectory::from_samples(t.samples().iter().map(|s| PoseSample::new(s.t, s.pose * x)).collect()).unwrap();
        let a = ate(&est, &gt, 0.01).unwrap();
        let b = ate(&apply(&est), &apply(&gt), 0.01).unwrap();
        assert!((a.position_rmse_cm - b.position_rmse_cm).abs() < 1e-9);
        assert!((a.orientation_rmse_deg - b.orientation_rmse_deg).abs() < 1e-6);
    }

    #[test]
    fn csv_has_one_row_per_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let gt = random_traj(&mut rng, 5);
        let res = ate(&gt, &gt, 0.01).unwrap();
        let mut buf = Vec::new();
        res.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 6);
    }
}
