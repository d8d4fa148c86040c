//! Spinning-LiDAR beam geometry: spherical/Cartesian conversion, vertical
//! channel assignment, and simulated channel dropout with ground-truth
//! retention.
//!
//! Dropout is modeled as elevation masking: points on dropped beams keep
//! their `(x, y)`, reflectance and beam index, the true `z` is recorded
//! aside, and the stored `z` becomes a sentinel 0 that the feature builder
//! pairs with an explicit mask flag.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cloud::{Point, PointCloud};
use crate::error::{Error, Result};

/// Vertical geometry of a spinning LiDAR: `beams` channels spread uniformly
/// over the elevation interval `[theta_min, theta_max]` (radians).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorSpec {
    pub beams: u32,
    pub theta_min: f64,
    pub theta_max: f64,
    /// Height of the sensor above ground, meters. Informational; the frame
    /// origin is the sensor itself.
    pub sensor_height: f64,
}

impl SensorSpec {
    pub fn new(beams: u32, theta_min: f64, theta_max: f64, sensor_height: f64) -> Result<Self> {
        if beams < 2 {
            return Err(Error::Config(format!(
                "sensor needs at least 2 beams, got {beams}"
            )));
        }
        if theta_min >= theta_max {
            return Err(Error::Config(format!(
                "sensor field of view is empty: theta_min {theta_min} >= theta_max {theta_max}"
            )));
        }
        Ok(SensorSpec {
            beams,
            theta_min,
            theta_max,
            sensor_height,
        })
    }

    /// Velodyne HDL-64E datasheet field of view.
    pub fn hdl64e() -> Self {
        SensorSpec {
            beams: 64,
            theta_min: (-24.8f64).to_radians(),
            theta_max: 2.0f64.to_radians(),
            sensor_height: 1.73,
        }
    }

    /// Elevation step between adjacent channels.
    pub fn delta_theta(&self) -> f64 {
        (self.theta_max - self.theta_min) / self.beams as f64
    }

    /// Nominal elevation of channel `b`, at the center of its bin.
    pub fn beam_elevation(&self, b: u32) -> f64 {
        self.theta_min + (b as f64 + 0.5) * self.delta_theta()
    }
}

/// `x = r·cosθ·cosφ`, `y = r·cosθ·sinφ`, `z = r·sinθ`.
pub fn cartesian_from_spherical(r: f64, theta: f64, phi: f64) -> (f64, f64, f64) {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    (r * ct * cp, r * ct * sp, r * st)
}

/// Inverse of [`cartesian_from_spherical`]; errors on the zero vector where
/// the angles are undefined.
pub fn spherical_from_cartesian(x: f64, y: f64, z: f64) -> Result<(f64, f64, f64)> {
    let r = (x * x + y * y + z * z).sqrt();
    if r == 0.0 {
        return Err(Error::Data("spherical angles undefined at the origin".into()));
    }
    Ok((r, (z / r).asin(), y.atan2(x)))
}

/// Quantize each point's elevation into a channel index:
/// `beam = clamp(floor((θ − θ_min)/Δθ), 0, B−1)`.
pub fn estimate_beam_index(cloud: &PointCloud, spec: &SensorSpec) -> PointCloud {
    let dt = spec.delta_theta();
    let points = cloud
        .points
        .iter()
        .map(|p| {
            let r = p.range();
            let theta = if r == 0.0 { 0.0 } else { (p.z / r).asin() };
            let q = ((theta - spec.theta_min) / dt).floor();
            let beam = (q.max(0.0) as u32).min(spec.beams - 1);
            Point {
                beam: Some(beam),
                ..*p
            }
        })
        .collect();
    cloud.like(points).with_sensor(*spec)
}

/// Which vertical channels to drop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DropoutPattern {
    /// Drop beams `{b : b ≡ phase_offset (mod n)}`.
    EveryNth { n: u32, phase_offset: u32 },
    /// Drop a seeded random subset of `round(fraction·B)` beams.
    RandomFraction { fraction: f64, seed: u64 },
    /// Drop the contiguous channels `[start, start + len)`.
    ContiguousBand { start: u32, len: u32 },
}

impl DropoutPattern {
    /// Resolve the dropped-beam set for a sensor with `beams` channels.
    pub fn dropped_beams(&self, beams: u32) -> Result<BTreeSet<u32>> {
        let set: BTreeSet<u32> = match *self {
            DropoutPattern::EveryNth { n, phase_offset } => {
                if n < 2 {
                    return Err(Error::Config(format!("every_nth needs n >= 2, got {n}")));
                }
                (0..beams).filter(|b| b % n == phase_offset % n).collect()
            }
            DropoutPattern::RandomFraction { fraction, seed } => {
                if fraction <= 0.0 || fraction >= 1.0 {
                    return Err(Error::Config(format!(
                        "random_fraction needs fraction in (0, 1), got {fraction}"
                    )));
                }
                let count = ((fraction * beams as f64).round() as usize).max(1);
                if count >= beams as usize {
                    return Err(Error::Config(format!(
                        "random_fraction {fraction} would drop all {beams} beams"
                    )));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rand::seq::index::sample(&mut rng, beams as usize, count)
                    .into_iter()
                    .map(|b| b as u32)
                    .collect()
            }
            DropoutPattern::ContiguousBand { start, len } => {
                if len == 0 || start + len > beams {
                    return Err(Error::Config(format!(
                        "contiguous band [{start}, {}) outside [0, {beams})",
                        start + len
                    )));
                }
                (start..start + len).collect()
            }
        };
        if set.len() >= beams as usize {
            return Err(Error::Config("dropout pattern drops every beam".into()));
        }
        if set.is_empty() {
            return Err(Error::Config("dropout pattern drops no beam".into()));
        }
        Ok(set)
    }
}

/// A point cloud with dropped channels masked and their true elevations
/// retained for supervision and scoring.
///
/// `truth_z[k]` is the elevation of the k-th masked point in point order.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedFrame {
    pub cloud: PointCloud,
    pub truth_z: Vec<f64>,
    pub dropped_beams: BTreeSet<u32>,
}

impl MaskedFrame {
    pub fn masked_count(&self) -> usize {
        self.cloud.points.iter().filter(|p| p.masked).count()
    }

    pub fn masked_fraction(&self) -> f64 {
        self.masked_count() as f64 / self.cloud.len() as f64
    }

    /// Indices of masked points, in point order.
    pub fn masked_indices(&self) -> Vec<usize> {
        self.cloud
            .points
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.masked.then_some(i))
            .collect()
    }

    /// Keep only the points selected by `keep` (parallel to the cloud),
    /// remapping the truth list accordingly.
    pub fn retain(&self, keep: &[bool]) -> Result<MaskedFrame> {
        if keep.len() != self.cloud.len() {
            return Err(Error::Shape(format!(
                "retain mask of {} entries for {} points",
                keep.len(),
                self.cloud.len()
            )));
        }
        let mut points = Vec::new();
        let mut truth = Vec::new();
        let mut t = self.truth_z.iter();
        for (p, &k) in self.cloud.points.iter().zip(keep) {
            let tz = if p.masked { t.next().copied() } else { None };
            if k {
                points.push(*p);
                if let Some(tz) = tz {
                    truth.push(tz);
                }
            }
        }
        Ok(MaskedFrame {
            cloud: self.cloud.like(points),
            truth_z: truth,
            dropped_beams: self.dropped_beams.clone(),
        })
    }

    /// Restore the original cloud exactly (inverse of the dropout).
    pub fn unmask(&self) -> PointCloud {
        let mut truth = self.truth_z.iter();
        let points = self
            .cloud
            .points
            .iter()
            .map(|p| {
                if p.masked {
                    Point {
                        z: *truth.next().expect("truth list aligned with masked points"),
                        masked: false,
                        ..*p
                    }
                } else {
                    *p
                }
            })
            .collect();
        self.cloud.like(points)
    }
}

/// Mask every point whose beam falls in the pattern's dropped set: record its
/// true `z`, replace the stored `z` with the sentinel 0, and leave `x`, `y`,
/// reflectance and beam untouched.
pub fn apply_channel_dropout(
    cloud: &PointCloud,
    pattern: &DropoutPattern,
    beams: u32,
) -> Result<MaskedFrame> {
    let dropped = pattern.dropped_beams(beams)?;
    let mut truth_z = Vec::new();
    let mut points = Vec::with_capacity(cloud.len());
    for p in &cloud.points {
        let beam = p.beam.ok_or_else(|| {
            Error::Data(format!(
                "channel dropout needs beam indices; frame {} has unassigned points",
                cloud.frame_id
            ))
        })?;
        if dropped.contains(&beam) {
            truth_z.push(p.z);
            points.push(Point {
                z: 0.0,
                masked: true,
                ..*p
            });
        } else {
            points.push(*p);
        }
    }
    Ok(MaskedFrame {
        cloud: cloud.like(points),
        truth_z,
        dropped_beams: dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TAU: f64 = std::f64::consts::PI * 2.0;

    #[test]
    fn cartesian_axes() {
        let (x, y, z) = cartesian_from_spherical(1.0, 0.0, 0.0);
        assert!((x - 1.0).abs() < 1e-15 && y.abs() < 1e-15 && z.abs() < 1e-15);
    }

    #[test]
    fn cartesian_direct_evaluation() {
        // r = 10, θ = π/6, φ = 0
        let (x, y, z) = cartesian_from_spherical(10.0, std::f64::consts::FRAC_PI_6, 0.0);
        assert!((x - 8.6602540).abs() < 1e-6);
        assert!(y.abs() < 1e-12);
        assert!((z - 5.0).abs() < 1e-12);
    }

    #[test]
    fn spherical_axes_and_diagonal() {
        let (r, th, ph) = spherical_from_cartesian(0.0, 0.0, 1.0).unwrap();
        assert!((r - 1.0).abs() < 1e-15);
        assert!((th - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert_eq!(ph, 0.0);

        let (r, th, ph) = spherical_from_cartesian(1.0, 1.0, 0.0).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-15);
        assert!(th.abs() < 1e-15);
        assert!((ph - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
    }

    #[test]
    fn spherical_rejects_origin() {
        assert!(spherical_from_cartesian(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn conversion_round_trip() {
        let mut checked = 0u32;
        for r in [0.5, 3.0, 42.0] {
            for i in 0..8 {
                let theta = -1.2 + 2.4 * (i as f64) / 7.0;
                for j in 0..8 {
                    let phi = -0.49 * TAU + 0.98 * TAU * (j as f64) / 7.0;
                    let (x, y, z) = cartesian_from_spherical(r, theta, phi);
                    let (r2, t2, p2) = spherical_from_cartesian(x, y, z).unwrap();
                    assert!((r - r2).abs() < 1e-12);
                    assert!((theta - t2).abs() < 1e-12);
                    assert!((phi - p2).abs() < 1e-12);
                    checked += 1;
                }
            }
        }
        assert_eq!(checked, 192);
    }

    fn cloud_at_elevations(thetas: &[f64]) -> PointCloud {
        let points = thetas
            .iter()
            .map(|&t| {
                let (x, y, z) = cartesian_from_spherical(10.0, t, 0.3);
                Point::new(x, y, z, 0.5)
            })
            .collect();
        PointCloud::new("t", points)
    }

    #[test]
    fn beam_index_boundaries() {
        let spec = SensorSpec::hdl64e();
        let eps = 1e-9;
        let c = cloud_at_elevations(&[spec.theta_min, spec.theta_max - eps]);
        let with_beams = estimate_beam_index(&c, &spec);
        assert_eq!(with_beams.points[0].beam, Some(0));
        assert_eq!(with_beams.points[1].beam, Some(63));
    }

    #[test]
    fn beam_index_quantization_formula() {
        // oracle: evaluate floor((θ − θ_min)/Δθ) on the elevation actually
        // seen by the operation, θ = asin(z/r) of the constructed point
        let spec = SensorSpec::hdl64e();
        for theta_deg in [-11.4, -11.2, -11.61, -20.0, 1.9] {
            let c = cloud_at_elevations(&[(theta_deg as f64).to_radians()]);
            let p = &c.points[0];
            let theta_seen = (p.z / p.range()).asin();
            let expect = (((theta_seen - spec.theta_min) / spec.delta_theta()).floor() as u32)
                .min(spec.beams - 1);
            let got = estimate_beam_index(&c, &spec).points[0].beam.unwrap();
            assert_eq!(got, expect, "theta = {theta_deg} deg");
        }
        // θ = −11.4° sits exactly on the edge between bins 31 and 32: the
        // exact quotient is 32.0, and the asin round trip through Cartesian
        // coordinates decides the side within one ulp. Either neighbor is a
        // valid quantization of the edge; everything off the edge is pinned
        // by the oracle loop above.
        let c = cloud_at_elevations(&[(-11.4f64).to_radians()]);
        let got = estimate_beam_index(&c, &spec).points[0].beam.unwrap();
        assert!(got == 31 || got == 32, "edge case assigned beam {got}");
    }

    #[test]
    fn beam_index_clamps_outside_fov() {
        let spec = SensorSpec::hdl64e();
        let c = cloud_at_elevations(&[spec.theta_min - 0.1, spec.theta_max + 0.1]);
        let with_beams = estimate_beam_index(&c, &spec);
        assert_eq!(with_beams.points[0].beam, Some(0));
        assert_eq!(with_beams.points[1].beam, Some(63));
    }

    #[test]
    fn every_nth_beam_sets() {
        let p = DropoutPattern::EveryNth { n: 4, phase_offset: 0 };
        assert_eq!(
            p.dropped_beams(8).unwrap().into_iter().collect::<Vec<_>>(),
            vec![0, 4]
        );
        let p = DropoutPattern::EveryNth { n: 4, phase_offset: 3 };
        assert_eq!(
            p.dropped_beams(8).unwrap().into_iter().collect::<Vec<_>>(),
            vec![3, 7]
        );
    }

    #[test]
    fn patterns_validate() {
        assert!(DropoutPattern::EveryNth { n: 1, phase_offset: 0 }
            .dropped_beams(8)
            .is_err());
        assert!(DropoutPattern::RandomFraction { fraction: 1.0, seed: 0 }
            .dropped_beams(8)
            .is_err());
        assert!(DropoutPattern::ContiguousBand { start: 0, len: 8 }
            .dropped_beams(8)
            .is_err());
        assert!(DropoutPattern::ContiguousBand { start: 6, len: 3 }
            .dropped_beams(8)
            .is_err());
        // 16 beams, 25% -> 4 dropped, deterministic per seed
        let p = DropoutPattern::RandomFraction { fraction: 0.25, seed: 11 };
        let a = p.dropped_beams(16).unwrap();
        let b = p.dropped_beams(16).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(a, b);
    }

    fn beamed_cloud() -> PointCloud {
        let mut points = Vec::new();
        for b in 0..8u32 {
            for j in 0..3 {
                let mut p = Point::new(j as f64 + 1.0, b as f64, -1.5 + 0.1 * b as f64, 0.4);
                p.beam = Some(b);
                points.push(p);
            }
        }
        PointCloud::new("f0", points)
    }

    #[test]
    fn dropout_masks_exactly_the_dropped_beams() {
        let c = beamed_cloud();
        let frame = apply_channel_dropout(
            &c,
            &DropoutPattern::EveryNth { n: 4, phase_offset: 0 },
            8,
        )
        .unwrap();
        assert_eq!(
            frame.dropped_beams.iter().copied().collect::<Vec<_>>(),
            vec![0, 4]
        );
        for (p, orig) in frame.cloud.points.iter().zip(&c.points) {
            let on_dropped = frame.dropped_beams.contains(&orig.beam.unwrap());
            assert_eq!(p.masked, on_dropped);
            assert_eq!(p.x, orig.x);
            assert_eq!(p.y, orig.y);
            assert_eq!(p.reflectance, orig.reflectance);
            assert_eq!(p.beam, orig.beam);
            if on_dropped {
                assert_eq!(p.z, 0.0);
            } else {
                assert_eq!(p.z, orig.z);
            }
        }
        assert_eq!(frame.masked_count(), 6);
        assert_eq!(frame.truth_z.len(), 6);
    }

    #[test]
    fn unmask_restores_original_exactly() {
        let c = beamed_cloud();
        let frame = apply_channel_dropout(
            &c,
            &DropoutPattern::EveryNth { n: 3, phase_offset: 1 },
            8,
        )
        .unwrap();
        assert_eq!(frame.unmask(), c);
    }

    #[test]
    fn dropout_requires_beam_indices() {
        let c = PointCloud::new("x", vec![Point::new(1.0, 0.0, 0.0, 0.1)]);
        assert!(apply_channel_dropout(
            &c,
            &DropoutPattern::EveryNth { n: 4, phase_offset: 0 },
            8
        )
        .is_err());
    }

    #[test]
    fn retain_remaps_truth() {
        let c = beamed_cloud();
        let frame = apply_channel_dropout(
            &c,
            &DropoutPattern::EveryNth { n: 4, phase_offset: 0 },
            8,
        )
        .unwrap();
        // drop every second point
        let keep: Vec<bool> = (0..frame.cloud.len()).map(|i| i % 2 == 0).collect();
        let kept = frame.retain(&keep).unwrap();
        assert_eq!(kept.masked_count(), kept.truth_z.len());
        for (p, orig_idx) in kept.cloud.points.iter().zip((0..c.len()).step_by(2)) {
            assert_eq!(p.x, c.points[orig_idx].x);
        }
        // kept masked points restore to the original values
        let restored = kept.unmask();
        for (p, orig_idx) in restored.points.iter().zip((0..c.len()).step_by(2)) {
            assert_eq!(p.z, c.points[orig_idx].z);
        }
    }
}
