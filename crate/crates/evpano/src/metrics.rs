//! Evaluation metrics: absolute rotation error against ground truth (after
//! anchor-time alignment), aggregate photometric error, residual histograms,
//! and the gauge/correlation helpers the acceptance experiments use.

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::event::{EGMParams, ResidualPair};
use crate::io::atomic_write;
use crate::solver::{evaluate_loss, scan_residuals, Loss, OptState};
use crate::trajectory::RotationTrajectory;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Both trajectories agree at the anchor time to within this angle (radians).
pub const ALIGN_TOL: f64 = 1e-9;

/// Estimated and ground-truth trajectories brought to a common frame: the
/// estimate is left-multiplied by the constant `R_gt(t0) * R_est(t0)^-1`, so
/// the two agree at the anchor time. Left offsets commute with geodesic
/// interpolation, so control poses are aligned once and sampling stays exact.
#[derive(Clone, Debug)]
pub struct AlignedTrajectoryPair {
    pub est: RotationTrajectory,
    pub gt: RotationTrajectory,
}

/// Aligns `est` to `gt` at anchor time `t0` (which must lie in both spans).
pub fn align_at(
    est: &RotationTrajectory,
    gt: &RotationTrajectory,
    t0: f64,
) -> Result<AlignedTrajectoryPair> {
    if !est.contains(t0) || !gt.contains(t0) {
        return Err(Error::Config(format!(
            "anchor time {t0} outside a trajectory span [{}, {}] / [{}, {}]",
            est.t_start(),
            est.t_end(),
            gt.t_start(),
            gt.t_end()
        )));
    }
    let offset = gt.sample(t0)?.rotation.compose(&est.sample(t0)?.rotation.inverse());
    let mut aligned = est.clone();
    for pose in aligned.poses_mut() {
        *pose = offset.compose(pose);
    }
    let pair = AlignedTrajectoryPair { est: aligned, gt: gt.clone() };
    debug_assert!(pair.est.sample(t0)?.rotation.angle_to(&pair.gt.sample(t0)?.rotation) < ALIGN_TOL);
    Ok(pair)
}

/// Root-mean-square geodesic angle between the aligned trajectories at the
/// given timestamps, in degrees.
pub fn are_rmse(pair: &AlignedTrajectoryPair, timestamps: &[f64]) -> Result<f64> {
    if timestamps.is_empty() {
        return Err(Error::Config("ARE needs at least one evaluation timestamp".into()));
    }
    let mut sum = 0.0;
    for &t in timestamps {
        let a = pair.est.sample(t)?.rotation;
        let b = pair.gt.sample(t)?.rotation;
        let angle = a.angle_to(&b);
        sum += angle * angle;
    }
    Ok((sum / timestamps.len() as f64).sqrt().to_degrees())
}

/// Default evaluation timestamps: the estimated trajectory's control times.
pub fn control_times(traj: &RotationTrajectory) -> Vec<f64> {
    (0..traj.len()).map(|i| traj.time_at(i)).collect()
}

/// Fixed-rate override of the evaluation timestamps for cross-method
/// comparisons: `n` samples evenly spaced over `[t0, t1]` inclusive.
pub fn uniform_times(t0: f64, t1: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![t0];
    }
    (0..n).map(|i| t0 + (t1 - t0) * i as f64 / (n - 1) as f64).collect()
}

/// Aggregate photometric error: sum of squared residuals over non-skipped
/// pairs, regardless of the loss driving the solver.
pub fn phe(
    camera: &CameraModel,
    state: &OptState,
    pairs: &[ResidualPair],
    egm: &EGMParams,
) -> Result<f64> {
    Ok(evaluate_loss(camera, state, pairs, egm, Loss::Quadratic, true)?.phe)
}

/// Residual histogram over `[-3C, 3C]` with outliers clamped into the end
/// bins; skipped pairs do not contribute.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub centers: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Index of the fullest bin.
    pub fn mode(&self) -> usize {
        let mut best = 0;
        for (i, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = i;
            }
        }
        best
    }
}

pub fn residual_histogram(
    camera: &CameraModel,
    state: &OptState,
    pairs: &[ResidualPair],
    egm: &EGMParams,
    bins: usize,
) -> Result<Histogram> {
    assert!(bins > 0, "histogram needs at least one bin");
    let half = 3.0 * egm.c_pos.max(egm.c_neg);
    let width = 2.0 * half / bins as f64;
    let mut counts = vec![0usize; bins];
    for eps in scan_residuals(camera, state, pairs, egm, true)?.into_iter().flatten() {
        let raw = ((eps + half) / width).floor();
        counts[(raw.max(0.0) as usize).min(bins - 1)] += 1;
    }
    let centers = (0..bins).map(|i| -half + (i as f64 + 0.5) * width).collect();
    Ok(Histogram { centers, counts })
}

/// Fraction of pairs whose residual magnitude is below `band`. The
/// denominator is the full pair count, so skipped pairs can only lower it.
pub fn fraction_within(
    camera: &CameraModel,
    state: &OptState,
    pairs: &[ResidualPair],
    egm: &EGMParams,
    band: f64,
) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let hits = scan_residuals(camera, state, pairs, egm, true)?
        .into_iter()
        .flatten()
        .filter(|eps| eps.abs() < band)
        .count();
    Ok(hits as f64 / pairs.len() as f64)
}

/// Pearson correlation coefficient of two equal-length samples.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va.sqrt() * vb.sqrt())
}

/// Valid-pixel values of `map` with one additive constant per connected
/// component chosen so each component's mean matches `reference` over the
/// same pixels. Returns (aligned estimate, reference) flattened over valid
/// pixels, ready for correlation or RMS comparison.
pub fn gauge_aligned_valid_pixels(
    map: &crate::map::PanoramaMap,
    reference: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(reference.len(), map.width() * map.height());
    let (labels, n_components) = map.valid_components();
    let mut shift = vec![(0.0, 0usize); n_components];
    for y in 0..map.height() {
        for x in 0..map.width() {
            if map.is_valid(x, y) {
                let entry = &mut shift[labels[map.flat(x, y)] as usize];
                entry.0 += reference[map.flat(x, y)] - map.value_at(x, y);
                entry.1 += 1;
            }
        }
    }
    let mut est = Vec::new();
    let mut gt = Vec::new();
    for y in 0..map.height() {
        for x in 0..map.width() {
            if map.is_valid(x, y) {
                let (sum, count) = shift[labels[map.flat(x, y)] as usize];
                est.push(map.value_at(x, y) + sum / count as f64);
                gt.push(reference[map.flat(x, y)]);
            }
        }
    }
    (est, gt)
}

/// Root-mean-square difference of two equal-length samples.
pub fn rms_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (sum / a.len() as f64).sqrt()
}

/// Writes metrics as `name, value` CSV rows.
pub fn save_metrics_csv(metrics: &[(String, f64)], path: &Path) -> Result<()> {
    atomic_write(path, |f| {
        let mut w = BufWriter::new(f);
        writeln!(w, "metric, value")?;
        for (name, value) in metrics {
            writeln!(w, "{name}, {value:.17e}")?;
        }
        w.flush()
    })
}

/// Human-readable one-line-per-metric summary.
pub fn format_summary(metrics: &[(String, f64)]) -> String {
    let width = metrics.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (name, value) in metrics {
        out.push_str(&format!("{name:width$}  {value:.6}\n"));
    }
    out
}

/// Writes a histogram as `bin_center, count` CSV rows.
pub fn save_histogram_csv(hist: &Histogram, path: &Path) -> Result<()> {
    atomic_write(path, |f| {
        let mut w = BufWriter::new(f);
        writeln!(w, "bin_center, count")?;
        for (c, n) in hist.centers.iter().zip(&hist.counts) {
            writeln!(w, "{c:.17e}, {n}")?;
        }
        w.flush()
    })
}
