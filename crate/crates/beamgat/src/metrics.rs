//! Reconstruction quality metrics: elevation RMSE/MAE over masked points,
//! threshold accuracy, all-points RMSE, symmetric Chamfer distance, and the
//! cumulative error distribution.
//!
//! RMSE over x/y/z runs over **all** points of a frame, while RMSE_z, MAE_z
//! and accuracy score **masked points only**; with z-only edits this makes
//! `rmse_xyz = √(masked_fraction) · rmse_z` an exact identity that the suite
//! asserts.

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// √(mean (ẑ−z)²) over masked points.
pub fn rmse_z(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let n = pred.len() as f64;
    let sum: f64 = pred
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((sum / n).sqrt())
}

/// Mean |ẑ−z| over masked points.
pub fn mae_z(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let n = pred.len() as f64;
    Ok(pred.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum::<f64>() / n)
}

/// Fraction of masked points with |ẑ−z| ≤ τ.
pub fn accuracy_at(pred: &[f64], truth: &[f64], tau: f64) -> Result<f64> {
    check_pair(pred, truth)?;
    let hits = pred
        .iter()
        .zip(truth)
        .filter(|(a, b)| (**a - **b).abs() <= tau)
        .count();
    Ok(hits as f64 / pred.len() as f64)
}

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::Data("metric over an empty point set".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions against {} truth values",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// √(mean over all points of ‖p̂−p‖²) between two same-order clouds.
pub fn rmse_xyz(reconstructed: &PointCloud, original: &PointCloud) -> Result<f64> {
    if reconstructed.len() != original.len() {
        return Err(Error::Shape(format!(
            "clouds of {} and {} points",
            reconstructed.len(),
            original.len()
        )));
    }
    if reconstructed.is_empty() {
        return Err(Error::Data("rmse over an empty cloud".into()));
    }
    let sum: f64 = reconstructed
        .points
        .iter()
        .zip(&original.points)
        .map(|(a, b)| {
            let dx = a.x - b.x;
            let dy = a.y - b.y;
            let dz = a.z - b.z;
            dx * dx + dy * dy + dz * dz
        })
        .sum();
    Ok((sum / reconstructed.len() as f64).sqrt())
}

/// Symmetric Chamfer distance between two point sets (mean Euclidean
/// nearest-neighbor distance each way, averaged). Accelerated by a kd-tree.
pub fn chamfer(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Data("chamfer distance over an empty set".into()));
    }
    Ok(0.5 * (mean_nn_distance(a, b) + mean_nn_distance(b, a)))
}

/// Exhaustive O(N²) oracle for [`chamfer`].
pub fn chamfer_brute_force(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Data("chamfer distance over an empty set".into()));
    }
    let one_way = |from: &[[f64; 3]], to: &[[f64; 3]]| -> f64 {
        let mut sum = 0.0;
        for p in from {
            let mut best = f64::INFINITY;
            for q in to {
                let d2 = sq_dist(p, q);
                if d2 < best {
                    best = d2;
                }
            }
            sum += best.sqrt();
        }
        sum / from.len() as f64
    };
    Ok(0.5 * (one_way(a, b) + one_way(b, a)))
}

#[inline]
fn sq_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Mean distance from each point of `from` to its nearest neighbor in `to`,
/// via a 3-d tree over `to`.
fn mean_nn_distance(from: &[[f64; 3]], to: &[[f64; 3]]) -> f64 {
    let mut order: Vec<u32> = (0..to.len() as u32).collect();
    build_tree(to, &mut order, 0);
    let mut sum = 0.0;
    for p in from {
        let mut best = f64::INFINITY;
        nearest(to, &order, 0, p, &mut best);
        sum += best.sqrt();
    }
    sum / from.len() as f64
}

fn build_tree(coords: &[[f64; 3]], slice: &mut [u32], depth: usize) {
    if slice.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        coords[a as usize][axis]
            .total_cmp(&coords[b as usize][axis])
            .then(a.cmp(&b))
    });
    let (lo, rest) = slice.split_at_mut(mid);
    build_tree(coords, lo, depth + 1);
    build_tree(coords, &mut rest[1..], depth + 1);
}

fn nearest(coords: &[[f64; 3]], slice: &[u32], depth: usize, q: &[f64; 3], best: &mut f64) {
    if slice.is_empty() {
        return;
    }
    let axis = depth % 3;
    let mid = slice.len() / 2;
    let pivot = &coords[slice[mid] as usize];
    let d2 = sq_dist(q, pivot);
    if d2 < *best {
        *best = d2;
    }
    let diff = q[axis] - pivot[axis];
    let (near, far) = if diff < 0.0 {
        (&slice[..mid], &slice[mid + 1..])
    } else {
        (&slice[mid + 1..], &slice[..mid])
    };
    nearest(coords, near, depth + 1, q, best);
    if diff * diff <= *best {
        nearest(coords, far, depth + 1, q, best);
    }
}

/// Cumulative fraction of |ẑ−z| errors at each threshold; monotone
/// non-decreasing, and exactly [`accuracy_at`] at shared thresholds.
pub fn error_cdf(pred: &[f64], truth: &[f64], edges: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_pair(pred, truth)?;
    let errors: Vec<f64> = pred.iter().zip(truth).map(|(a, b)| (a - b).abs()).collect();
    let n = errors.len() as f64;
    Ok(edges
        .iter()
        .map(|&tau| {
            let frac = errors.iter().filter(|e| **e <= tau).count() as f64 / n;
            (tau, frac)
        })
        .collect())
}

/// Scores of one reconstructed frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMetrics {
    pub rmse_xyz: f64,
    pub rmse_z: f64,
    pub mae_z: f64,
    pub accuracy_at_tau: f64,
    pub chamfer: f64,
    pub runtime_s: f64,
    pub masked_count: usize,
    pub point_count: usize,
}

/// Mean / standard deviation / extremes of one metric across frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Spread {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Spread {
            mean,
            std: var.sqrt(),
            min: values.iter().cloned().fold(f64::INFINITY, f64::min),
            max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Per-frame rows plus the aggregate summary.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub frames: Vec<(String, FrameMetrics)>,
    pub tau: f64,
}

impl MetricsReport {
    pub fn new(tau: f64) -> Self {
        MetricsReport {
            frames: Vec::new(),
            tau,
        }
    }

    pub fn push(&mut self, frame_id: impl Into<String>, m: FrameMetrics) {
        self.frames.push((frame_id.into(), m));
    }

    fn column(&self, pick: impl Fn(&FrameMetrics) -> f64) -> Vec<f64> {
        self.frames.iter().map(|(_, m)| pick(m)).collect()
    }

    /// Mean of every metric across frames.
    pub fn aggregate(&self) -> FrameMetrics {
        let mean = |pick: fn(&FrameMetrics) -> f64| Spread::of(&self.column(pick)).mean;
        FrameMetrics {
            rmse_xyz: mean(|m| m.rmse_xyz),
            rmse_z: mean(|m| m.rmse_z),
            mae_z: mean(|m| m.mae_z),
            accuracy_at_tau: mean(|m| m.accuracy_at_tau),
            chamfer: mean(|m| m.chamfer),
            runtime_s: mean(|m| m.runtime_s),
            masked_count: self.frames.iter().map(|(_, m)| m.masked_count).sum::<usize>()
                / self.frames.len().max(1),
            point_count: self.frames.iter().map(|(_, m)| m.point_count).sum::<usize>()
                / self.frames.len().max(1),
        }
    }

    /// Mean/std/min/max per metric, for the summary artifact.
    pub fn spreads(&self) -> Vec<(&'static str, Spread)> {
        vec![
            ("rmse_xyz", Spread::of(&self.column(|m| m.rmse_xyz))),
            ("rmse_z", Spread::of(&self.column(|m| m.rmse_z))),
            ("mae_z", Spread::of(&self.column(|m| m.mae_z))),
            ("accuracy", Spread::of(&self.column(|m| m.accuracy_at_tau))),
            ("chamfer", Spread::of(&self.column(|m| m.chamfer))),
            ("runtime_s", Spread::of(&self.column(|m| m.runtime_s))),
        ]
    }
}
