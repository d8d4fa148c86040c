//! Deterministic synthetic spinning-LiDAR scans over analytic scenes (ground
//! plane plus axis-aligned boxes), providing exact ground truth for
//! desk-scale training and verification.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::beam::{cartesian_from_spherical, SensorSpec};
use crate::cloud::{Point, PointCloud};
use crate::error::{Error, Result};
use crate::mix_seed;

/// Axis-aligned obstacle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxObstacle {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub reflectance: f64,
}

/// Analytic scene scanned from a sensor at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    /// Ground plane elevation (below the sensor, so negative), if present.
    pub ground_z: Option<f64>,
    pub ground_reflectance: f64,
    pub boxes: Vec<BoxObstacle>,
    /// Maximum sensing range; farther hits are discarded.
    pub r_max: f64,
}

impl Scene {
    pub fn ground_only(ground_z: f64, r_max: f64) -> Self {
        Scene {
            ground_z: Some(ground_z),
            ground_reflectance: 0.3,
            boxes: Vec::new(),
            r_max,
        }
    }

    fn has_surfaces(&self) -> bool {
        self.ground_z.is_some() || !self.boxes.is_empty()
    }

    /// Nearest hit along the unit ray `dir` from the origin, as
    /// (range, reflectance).
    fn raycast(&self, dir: &[f64; 3]) -> Option<(f64, f64)> {
        let mut best: Option<(f64, f64)> = None;
        if let Some(z0) = self.ground_z {
            if dir[2] != 0.0 {
                let t = z0 / dir[2];
                if t > 0.0 && t <= self.r_max {
                    best = Some((t, self.ground_reflectance));
                }
            }
        }
        for b in &self.boxes {
            if let Some(t) = ray_box(dir, &b.min, &b.max) {
                if t <= self.r_max && best.map_or(true, |(bt, _)| t < bt) {
                    best = Some((t, b.reflectance));
                }
            }
        }
        best
    }
}

/// Slab intersection of a ray from the origin with an axis-aligned box;
/// returns the entry distance when the box is hit in front of the sensor.
fn ray_box(dir: &[f64; 3], min: &[f64; 3], max: &[f64; 3]) -> Option<f64> {
    let mut t_enter = f64::NEG_INFINITY;
    let mut t_exit = f64::INFINITY;
    for a in 0..3 {
        if dir[a] == 0.0 {
            if 0.0 < min[a] || 0.0 > max[a] {
                return None;
            }
            continue;
        }
        let t1 = min[a] / dir[a];
        let t2 = max[a] / dir[a];
        t_enter = t_enter.max(t1.min(t2));
        t_exit = t_exit.min(t1.max(t2));
    }
    (t_enter <= t_exit && t_enter > 0.0).then_some(t_enter)
}

/// Scan the scene: one ray per (beam, azimuth), nearest hit within range,
/// Gaussian range noise of `noise_std` meters, misses omitted. Beam indices
/// are exact and the sensor spec is attached to the returned cloud.
pub fn raycast_scan(
    scene: &Scene,
    spec: &SensorSpec,
    azimuth_steps: u32,
    noise_std: f64,
    seed: u64,
    frame_id: &str,
) -> Result<PointCloud> {
    if azimuth_steps < 8 {
        return Err(Error::Config(format!(
            "need at least 8 azimuth steps, got {azimuth_steps}"
        )));
    }
    if !scene.has_surfaces() {
        return Err(Error::Data("scene has no surfaces, scan would be empty".into()));
    }
    let noise = if noise_std > 0.0 {
        Some(Normal::new(0.0, noise_std).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    for b in 0..spec.beams {
        let theta = spec.beam_elevation(b);
        let (st, ct) = theta.sin_cos();
        for m in 0..azimuth_steps {
            let phi = std::f64::consts::TAU * m as f64 / azimuth_steps as f64;
            let (sp, cp) = phi.sin_cos();
            let dir = [ct * cp, ct * sp, st];
            if let Some((range, reflectance)) = scene.raycast(&dir) {
                let r = match &noise {
                    Some(n) => range + n.sample(&mut rng),
                    None => range,
                };
                if r <= 0.0 {
                    continue;
                }
                let (x, y, z) = cartesian_from_spherical(r, theta, phi);
                let mut p = Point::new(x, y, z, reflectance);
                p.beam = Some(b);
                points.push(p);
            }
        }
    }
    if points.is_empty() {
        return Err(Error::Data(format!(
            "scan of frame {frame_id} produced no returns"
        )));
    }
    Ok(PointCloud::new(frame_id, points).with_sensor(*spec))
}

/// Parameters of the randomized benchmark scenes.
#[derive(Debug, Clone, Copy)]
pub struct BenchmarkParams {
    pub ground_z: f64,
    pub boxes_min: u32,
    pub boxes_max: u32,
    pub azimuth_steps: u32,
    pub noise_std: f64,
    pub r_max: f64,
}

impl Default for BenchmarkParams {
    fn default() -> Self {
        BenchmarkParams {
            ground_z: -1.73,
            boxes_min: 3,
            boxes_max: 6,
            azimuth_steps: 360,
            noise_std: 0.01,
            r_max: 80.0,
        }
    }
}

/// One randomized scene: boxes of assorted sizes scattered in a ring around
/// the sensor, resting on the ground plane.
pub fn random_scene(params: &BenchmarkParams, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_boxes = rng.gen_range(params.boxes_min..=params.boxes_max);
    let mut boxes = Vec::with_capacity(n_boxes as usize);
    for _ in 0..n_boxes {
        let dist = rng.gen_range(4.0..28.0);
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let half_x = rng.gen_range(0.4..1.6);
        let half_y = rng.gen_range(0.4..1.6);
        let height = rng.gen_range(0.6..2.6);
        let cx = dist * angle.cos();
        let cy = dist * angle.sin();
        boxes.push(BoxObstacle {
            min: [cx - half_x, cy - half_y, params.ground_z],
            max: [cx + half_x, cy + half_y, params.ground_z + height],
            reflectance: 0.7,
        });
    }
    Scene {
        ground_z: Some(params.ground_z),
        ground_reflectance: 0.3,
        boxes,
        r_max: params.r_max,
    }
}

/// Deterministic set of `n_frames` scans over randomized scenes.
pub fn make_benchmark_set(
    n_frames: u32,
    spec: &SensorSpec,
    params: &BenchmarkParams,
    seed: u64,
) -> Result<Vec<PointCloud>> {
    if n_frames == 0 {
        return Err(Error::Config("benchmark set needs at least 1 frame".into()));
    }
    (0..n_frames)
        .map(|i| {
            let scene_seed = mix_seed(seed, 2 * i as u64);
            let noise_seed = mix_seed(seed, 2 * i as u64 + 1);
            let scene = random_scene(params, scene_seed);
            raycast_scan(
                &scene,
                spec,
                params.azimuth_steps,
                params.noise_std,
                noise_seed,
                &format!("synth_{i:04}"),
            )
        })
        .collect()
}
