//! Run configuration: one TOML file with sections for data, sensor, synth,
//! dropout, graph, model, train, eval, sweep and output. Unknown keys are
//! rejected, every random behavior is keyed by an explicit seed, and each
//! command echoes the fully resolved config next to its outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::beam::{DropoutPattern, SensorSpec};
use crate::cloud::AxisBounds;
use crate::error::{Error, Result};
use crate::gat::ModelConfig;
use crate::graph::GraphSpace;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory of full (unmasked) frame CSVs; default `<output>/frames`.
    pub frames_dir: Option<PathBuf>,
    /// Directory of masked frame CSVs + truth sidecars; default
    /// `<output>/masked`.
    pub masked_dir: Option<PathBuf>,
    /// Directory of raw KITTI `.bin` scans, used by `dropout` when set.
    pub kitti_dir: Option<PathBuf>,
    pub r_min: f64,
    pub r_max: f64,
    pub bounds: AxisBounds,
    /// Fixed-size input: clouds larger than this are uniformly subsampled.
    pub subsample: usize,
    /// Frames with fewer valid points are excluded.
    pub min_points: usize,
    pub subsample_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            frames_dir: None,
            masked_dir: None,
            kitti_dir: None,
            r_min: 2.0,
            r_max: 80.0,
            bounds: AxisBounds::default(),
            subsample: 4096,
            min_points: 1024,
            subsample_seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorConfig {
    pub beams: u32,
    pub theta_min_deg: f64,
    pub theta_max_deg: f64,
    pub sensor_height: f64,
}

impl Default for SensorConfig {
    /// Desk-scale default: 16 channels over the HDL-64E field of view.
    fn default() -> Self {
        SensorConfig {
            beams: 16,
            theta_min_deg: -24.8,
            theta_max_deg: 2.0,
            sensor_height: 1.73,
        }
    }
}

impl SensorConfig {
    pub fn to_spec(&self) -> Result<SensorSpec> {
        SensorSpec::new(
            self.beams,
            self.theta_min_deg.to_radians(),
            self.theta_max_deg.to_radians(),
            self.sensor_height,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub frames: u32,
    pub azimuth_steps: u32,
    pub ground_z: f64,
    pub boxes_min: u32,
    pub boxes_max: u32,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            frames: 20,
            azimuth_steps: 360,
            ground_z: -1.73,
            boxes_min: 3,
            boxes_max: 6,
            noise_std: 0.01,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutKind {
    EveryNth,
    RandomFraction,
    ContiguousBand,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DropoutConfig {
    pub kind: DropoutKind,
    /// every_nth: drop beams ≡ phase_offset (mod n).
    pub n: u32,
    pub phase_offset: u32,
    /// random_fraction: fraction of beams to drop.
    pub fraction: f64,
    pub seed: u64,
    /// contiguous_band: first dropped beam and band length.
    pub band_start: u32,
    pub band_len: u32,
}

impl Default for DropoutConfig {
    fn default() -> Self {
        DropoutConfig {
            kind: DropoutKind::EveryNth,
            n: 4,
            phase_offset: 0,
            fraction: 0.25,
            seed: 9,
            band_start: 0,
            band_len: 4,
        }
    }
}

impl DropoutConfig {
    pub fn to_pattern(&self) -> DropoutPattern {
        match self.kind {
            DropoutKind::EveryNth => DropoutPattern::EveryNth {
                n: self.n,
                phase_offset: self.phase_offset,
            },
            DropoutKind::RandomFraction => DropoutPattern::RandomFraction {
                fraction: self.fraction,
                seed: self.seed,
            },
            DropoutKind::ContiguousBand => DropoutPattern::ContiguousBand {
                start: self.band_start,
                len: self.band_len,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    pub k: usize,
    pub space: GraphSpace,
    pub self_loops: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            k: 10,
            space: GraphSpace::XyPlusNominalZ,
            self_loops: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Accuracy threshold τ, meters.
    pub tau: f64,
    /// Thresholds of the cumulative error distribution.
    pub cdf_edges: Vec<f64>,
    pub write_ply: bool,
    pub write_csv: bool,
    /// Dump the first evaluated frame's CSR arrays for debugging.
    pub dump_graph: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            tau: 0.10,
            cdf_edges: vec![0.01, 0.02, 0.05, 0.10, 0.15, 0.20, 0.30, 0.50, 0.75, 1.00],
            write_ply: true,
            write_csv: true,
            dump_graph: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub ks: Vec<usize>,
    /// Timing repetitions per k; the minimum is reported.
    pub repeats: u32,
    /// Retrain per k instead of re-evaluating the provided model.
    pub retrain: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            ks: vec![4, 6, 8, 10, 14, 20],
            repeats: 3,
            retrain: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Run directory; every artifact lands beneath it.
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub sensor: SensorConfig,
    pub synth: SynthConfig,
    pub dropout: DropoutConfig,
    pub graph: GraphConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.r_min >= self.data.r_max {
            return Err(Error::Config(format!(
                "data.r_min {} must be below data.r_max {}",
                self.data.r_min, self.data.r_max
            )));
        }
        if self.data.subsample == 0 {
            return Err(Error::Config("data.subsample must be at least 1".into()));
        }
        self.sensor.to_spec()?;
        if self.synth.boxes_min > self.synth.boxes_max {
            return Err(Error::Config("synth.boxes_min above synth.boxes_max".into()));
        }
        if self.synth.noise_std < 0.0 {
            return Err(Error::Config("synth.noise_std must be non-negative".into()));
        }
        if self.graph.k == 0 {
            return Err(Error::Config("graph.k must be at least 1".into()));
        }
        self.model.validate()?;
        self.train.validate()?;
        if self.eval.tau <= 0.0 {
            return Err(Error::Config("eval.tau must be positive".into()));
        }
        if self.eval.cdf_edges.is_empty() {
            return Err(Error::Config("eval.cdf_edges must not be empty".into()));
        }
        if self.sweep.ks.is_empty() {
            return Err(Error::Config("sweep.ks must not be empty".into()));
        }
        if self.sweep.repeats == 0 {
            return Err(Error::Config("sweep.repeats must be at least 1".into()));
        }
        Ok(())
    }

    pub fn frames_dir(&self) -> PathBuf {
        self.data
            .frames_dir
            .clone()
            .unwrap_or_else(|| self.output.dir.join("frames"))
    }

    pub fn masked_dir(&self) -> PathBuf {
        self.data
            .masked_dir
            .clone()
            .unwrap_or_else(|| self.output.dir.join("masked"))
    }

    pub fn model_path(&self) -> PathBuf {
        self.output.dir.join("model.bgat")
    }

    /// Write the fully resolved configuration next to a command's outputs.
    pub fn echo(&self, command: &str) -> Result<()> {
        let path = self.output.dir.join(format!("{command}.config.toml"));
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Internal(format!("config serialization: {e}")))?;
        std::fs::create_dir_all(&self.output.dir)
            .map_err(|e| Error::io(&self.output.dir, e))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}
