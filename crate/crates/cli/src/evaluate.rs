//! `evaluate`: first-pose alignment and absolute trajectory error.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use evsplat::evaluation::{align_first_pose, ate, load_tum};

use crate::{GlobalArgs, Outcome};

#[derive(Args, Debug, Clone)]
pub struct EvaluateArgs {
    /// Estimated trajectory (TUM).
    estimate: PathBuf,
    /// Ground-truth trajectory (TUM).
    ground_truth: PathBuf,
    /// Timestamp association tolerance in seconds.
    #[arg(long, default_value_t = 0.01)]
    tolerance: f64,
    /// Tolerance for associating the first estimated pose.
    #[arg(long, default_value_t = 0.05)]
    align_tolerance: f64,
    /// Compare without aligning the first pose.
    #[arg(long)]
    no_align: bool,
    /// Write per-pose errors as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

pub fn run(_global: &GlobalArgs, a: &EvaluateArgs) -> Result<Outcome> {
    let est = load_tum(&a.estimate)?;
    let gt = load_tum(&a.ground_truth)?;
    let est = if a.no_align {
        est
    } else {
        align_first_pose(&est, &gt, a.align_tolerance)?
    };
    let result = ate(&est, &gt, a.tolerance)?;
    println!("{result}");
    if let Some(path) = &a.csv {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        result
            .write_csv(BufWriter::new(file))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(Outcome::Success)
}
