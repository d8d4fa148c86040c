//! Point-cloud model: LiDAR returns with optional beam index and mask flag,
//! plus the spatial filtering and fixed-size subsampling applied before graph
//! construction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::beam::SensorSpec;
use crate::error::{Error, Result};

/// One LiDAR return. Coordinates in meters, reflectance unitless in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub reflectance: f64,
    /// Vertical channel index in `[0, B)`, when known.
    pub beam: Option<u32>,
    /// True for points whose elevation was dropped and must be reconstructed.
    pub masked: bool,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64, reflectance: f64) -> Self {
        Point {
            x,
            y,
            z,
            reflectance,
            beam: None,
            masked: false,
        }
    }

    /// Euclidean distance from the sensor origin.
    pub fn range(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

/// Ordered set of returns for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub frame_id: String,
    /// Vertical geometry of the acquiring sensor, when known. File formats do
    /// not carry it; pipelines reattach it from configuration.
    pub sensor: Option<SensorSpec>,
}

impl PointCloud {
    pub fn new(frame_id: impl Into<String>, points: Vec<Point>) -> Self {
        PointCloud {
            points,
            frame_id: frame_id.into(),
            sensor: None,
        }
    }

    pub fn with_sensor(mut self, spec: SensorSpec) -> Self {
        self.sensor = Some(spec);
        self
    }

    /// New cloud with the same frame id and sensor.
    pub fn like(&self, points: Vec<Point>) -> Self {
        PointCloud {
            points,
            frame_id: self.frame_id.clone(),
            sensor: self.sensor,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Axis-aligned crop box for [`range_filter`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct AxisBounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl AxisBounds {
    pub fn contains(&self, p: &Point) -> bool {
        let c = [p.x, p.y, p.z];
        c.iter()
            .zip(self.min.iter().zip(&self.max))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }
}

impl Default for AxisBounds {
    /// Envelops the extents of an urban HDL-64E scan with margin.
    fn default() -> Self {
        AxisBounds {
            min: [-80.0, -80.0, -10.0],
            max: [80.0, 80.0, 4.0],
        }
    }
}

/// Keep points whose Euclidean range lies in `[r_min, r_max]` and whose
/// coordinates fall inside `bounds`. Order is preserved.
pub fn range_filter(
    cloud: &PointCloud,
    r_min: f64,
    r_max: f64,
    bounds: &AxisBounds,
) -> Result<PointCloud> {
    if r_min >= r_max {
        return Err(Error::Config(format!(
            "range filter needs r_min < r_max, got [{r_min}, {r_max}]"
        )));
    }
    let mask = range_filter_mask(cloud, r_min, r_max, bounds);
    let points = cloud
        .points
        .iter()
        .zip(&mask)
        .filter_map(|(p, keep)| keep.then_some(*p))
        .collect();
    Ok(cloud.like(points))
}

/// Per-point keep decision of [`range_filter`]; used when a parallel array
/// (ground truth for masked points) must survive the same filtering.
pub fn range_filter_mask(
    cloud: &PointCloud,
    r_min: f64,
    r_max: f64,
    bounds: &AxisBounds,
) -> Vec<bool> {
    cloud
        .points
        .iter()
        .map(|p| {
            let r = p.range();
            r >= r_min && r <= r_max && bounds.contains(p)
        })
        .collect()
}

/// Keep decision of [`subsample_uniform`] as a boolean mask over the input.
pub fn subsample_mask(len: usize, n: usize, seed: u64) -> Vec<bool> {
    if len <= n {
        return vec![true; len];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = rand::seq::index::sample(&mut rng, len, n);
    let mut keep = vec![false; len];
    for i in chosen {
        keep[i] = true;
    }
    keep
}

/// Uniform random subset of exactly `n` points (identity when the cloud is
/// already small enough), without replacement, preserving point order.
/// Deterministic per `(cloud length, n, seed)`.
pub fn subsample_uniform(cloud: &PointCloud, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::Config("subsample size must be at least 1".into()));
    }
    let keep = subsample_mask(cloud.len(), n, seed);
    let points = cloud
        .points
        .iter()
        .zip(&keep)
        .filter_map(|(p, k)| k.then_some(*p))
        .collect();
    Ok(cloud.like(points))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud_of(coords: &[(f64, f64, f64)]) -> PointCloud {
        PointCloud::new(
            "t",
            coords
                .iter()
                .map(|&(x, y, z)| Point::new(x, y, z, 0.5))
                .collect(),
        )
    }

    #[test]
    fn origin_point_removed_by_range_filter() {
        let c = cloud_of(&[(0.0, 0.0, 0.0), (10.0, 0.0, 0.0)]);
        let f = range_filter(&c, 2.0, 80.0, &AxisBounds::default()).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f.points[0].x, 10.0);
    }

    #[test]
    fn filter_is_identity_when_all_inside() {
        let c = cloud_of(&[(10.0, 0.0, -1.0), (0.0, 30.0, 2.0), (-5.0, 5.0, 0.0)]);
        let f = range_filter(&c, 2.0, 80.0, &AxisBounds::default()).unwrap();
        assert_eq!(f, c);
    }

    #[test]
    fn filter_rejects_inverted_range() {
        let c = cloud_of(&[(1.0, 0.0, 0.0)]);
        assert!(range_filter(&c, 80.0, 2.0, &AxisBounds::default()).is_err());
    }

    #[test]
    fn filter_preserves_order() {
        let c = cloud_of(&[(10.0, 0.0, 0.0), (0.1, 0.0, 0.0), (20.0, 0.0, 0.0)]);
        let f = range_filter(&c, 2.0, 80.0, &AxisBounds::default()).unwrap();
        assert_eq!(f.points[0].x, 10.0);
        assert_eq!(f.points[1].x, 20.0);
    }

    #[test]
    fn subsample_identity_when_small() {
        let c = cloud_of(&[(1.0, 0.0, 0.0), (2.0, 0.0, 0.0)]);
        assert_eq!(subsample_uniform(&c, 5, 1).unwrap(), c);
        assert_eq!(subsample_uniform(&c, 2, 1).unwrap(), c);
    }

    #[test]
    fn subsample_deterministic_and_exact() {
        let coords: Vec<(f64, f64, f64)> = (0..1000).map(|i| (i as f64, 0.0, 0.0)).collect();
        let c = cloud_of(&coords);
        let a = subsample_uniform(&c, 128, 42).unwrap();
        let b = subsample_uniform(&c, 128, 42).unwrap();
        let other = subsample_uniform(&c, 128, 43).unwrap();
        assert_eq!(a.len(), 128);
        assert_eq!(a, b);
        assert_ne!(a, other);
    }

    #[test]
    fn subsample_preserves_order() {
        let coords: Vec<(f64, f64, f64)> = (0..100).map(|i| (i as f64, 0.0, 0.0)).collect();
        let c = cloud_of(&coords);
        let s = subsample_uniform(&c, 10, 7).unwrap();
        let xs: Vec<f64> = s.points.iter().map(|p| p.x).collect();
        let mut sorted = xs.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(xs, sorted);
    }
}
