//! Training: per-frame feature normalization, masked elevation loss, Adam,
//! and the epoch loop with early stopping.
//!
//! Normalization statistics come from observed (unmasked) points only, so
//! ground truth of the dropped channels never leaks into the inputs. The
//! loss is mean squared error over masked nodes in normalized space; the
//! validation score reported per epoch is masked MSE in physical meters.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{GradientMap, Tape, Tensor};
use crate::beam::MaskedFrame;
use crate::error::{Error, Result};
use crate::gat::{model_forward, Feature, GatModel, ModelConfig};
use crate::graph::KnnGraph;
use crate::mix_seed;
use crate::scalar::Scalar;

/// Per-feature mean/std over the observed points of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub features: Vec<Feature>,
}

const STD_FLOOR: f64 = 1e-6;

impl NormStats {
    fn feature_index(&self, f: Feature) -> Option<usize> {
        self.features.iter().position(|&x| x == f)
    }

    /// Map a normalized elevation back to meters.
    pub fn denormalize_z(&self, z_norm: f64) -> Result<f64> {
        let i = self.feature_index(Feature::ZMasked).ok_or_else(|| {
            Error::Config("model features do not include z, nothing to denormalize".into())
        })?;
        Ok(z_norm * self.std[i] + self.mean[i])
    }

    /// Map a physical elevation into normalized space.
    pub fn normalize_z(&self, z: f64) -> Result<f64> {
        let i = self.feature_index(Feature::ZMasked).ok_or_else(|| {
            Error::Config("model features do not include z".into())
        })?;
        Ok((z - self.mean[i]) / self.std[i])
    }
}

fn raw_feature(p: &crate::cloud::Point, f: Feature, beams: u32) -> f64 {
    match f {
        Feature::X => p.x,
        Feature::Y => p.y,
        Feature::ZMasked => p.z,
        Feature::Reflectance => p.reflectance,
        Feature::MaskFlag => p.masked as u8 as f64,
        Feature::BeamNorm => {
            let b = p.beam.unwrap_or(0) as f64;
            if beams > 1 {
                b / (beams - 1) as f64
            } else {
                0.0
            }
        }
    }
}

/// Build the normalized feature matrix (N×F) of a frame.
///
/// Every feature is z-scored with mean/std over observed points (std clamped
/// below by 1e-6), except the mask flag, which passes through unscaled. The
/// masked points' z becomes exactly 0 after normalization.
pub fn normalize_frame(frame: &MaskedFrame, features: &[Feature]) -> Result<(Tensor<f64>, NormStats)> {
    let n = frame.cloud.len();
    let observed: Vec<&crate::cloud::Point> =
        frame.cloud.points.iter().filter(|p| !p.masked).collect();
    if observed.is_empty() {
        return Err(Error::Data(format!(
            "frame {} has no observed points to normalize against",
            frame.cloud.frame_id
        )));
    }
    if features.contains(&Feature::BeamNorm) || features.contains(&Feature::ZMasked) {
        // beam_norm needs the channel count; infer from the sensor spec when
        // present, else from the largest index seen
        // (ZMasked listed here only to keep the borrow of sensor simple)
    }
    let beams = frame
        .cloud
        .sensor
        .map(|s| s.beams)
        .unwrap_or_else(|| {
            frame
                .cloud
                .points
                .iter()
                .filter_map(|p| p.beam)
                .max()
                .map(|b| b + 1)
                .unwrap_or(1)
        });
    let f = features.len();
    let mut mean = vec![0.0; f];
    let mut std = vec![0.0; f];
    for (fi, feat) in features.iter().enumerate() {
        if *feat == Feature::MaskFlag {
            mean[fi] = 0.0;
            std[fi] = 1.0;
            continue;
        }
        let m = observed.len() as f64;
        let mu: f64 = observed.iter().map(|p| raw_feature(p, *feat, beams)).sum::<f64>() / m;
        let var: f64 = observed
            .iter()
            .map(|p| {
                let d = raw_feature(p, *feat, beams) - mu;
                d * d
            })
            .sum::<f64>()
            / m;
        mean[fi] = mu;
        std[fi] = var.sqrt().max(STD_FLOOR);
    }
    let mut values = Vec::with_capacity(n * f);
    for p in &frame.cloud.points {
        for (fi, feat) in features.iter().enumerate() {
            if *feat == Feature::MaskFlag {
                values.push(raw_feature(p, *feat, beams));
            } else if *feat == Feature::ZMasked && p.masked {
                values.push(0.0);
            } else {
                values.push((raw_feature(p, *feat, beams) - mean[fi]) / std[fi]);
            }
        }
    }
    Ok((
        Tensor::from_parts(vec![n, f], values),
        NormStats {
            mean,
            std,
            features: features.to_vec(),
        },
    ))
}

/// Mean over masked nodes of the squared difference between the prediction
/// and the normalized ground truth. Differentiable through `z_hat`.
pub fn loss_masked_mse(
    tape: &mut Tape<f64>,
    z_hat: &Tensor<f64>,
    frame: &MaskedFrame,
    stats: &NormStats,
) -> Result<Tensor<f64>> {
    let masked = frame.masked_indices();
    if masked.is_empty() {
        return Err(Error::Data(format!(
            "frame {} has no masked nodes to score",
            frame.cloud.frame_id
        )));
    }
    if z_hat.rows() != frame.cloud.len() || z_hat.cols() != 1 {
        return Err(Error::Shape(format!(
            "predictions shaped {:?} for a frame of {} points",
            z_hat.shape(),
            frame.cloud.len()
        )));
    }
    let truth_norm: Vec<f64> = frame
        .truth_z
        .iter()
        .map(|&z| stats.normalize_z(z))
        .collect::<Result<_>>()?;
    let truth = Tensor::from_parts(vec![masked.len(), 1], truth_norm);
    let masked = std::sync::Arc::new(masked);
    let picked = tape.gather_rows(z_hat, &masked)?;
    let diff = tape.sub(&picked, &truth)?;
    let sq = tape.hadamard(&diff, &diff)?;
    tape.mean(&sq)
}

/// Optimizer configuration and loop controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: u32,
    /// Stop after this many consecutive epochs without validation
    /// improvement.
    pub patience: u32,
    /// Fraction of frames held out for validation.
    pub split_fraction: f64,
    /// Shuffle frames before splitting when set; otherwise the validation
    /// tail is taken by frame index.
    pub split_shuffle_seed: Option<u64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_epochs: 100,
            patience: 10,
            split_fraction: 0.2,
            split_shuffle_seed: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0 {
            return Err(Error::Config("learning rate must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("training needs at least one epoch".into()));
        }
        if !(0.0..1.0).contains(&self.split_fraction) {
            return Err(Error::Config(format!(
                "split fraction {} outside [0, 1)",
                self.split_fraction
            )));
        }
        Ok(())
    }
}

/// First/second-moment estimates per parameter, in the model's canonical
/// parameter order.
#[derive(Debug, Clone)]
pub struct AdamState<S: Scalar> {
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(model: &GatModel<S>) -> Self {
        let m = model.parameters().iter().map(|p| vec![S::zero(); p.len()]).collect();
        let v = model.parameters().iter().map(|p| vec![S::zero(); p.len()]).collect();
        AdamState { m, v, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update with bias correction. `leaves` are the tracked parameter
/// tensors the gradients were computed against, aligned with the model's
/// canonical parameter order; parameters without gradient stay put.
pub fn adam_step<S: Scalar>(
    model: &mut GatModel<S>,
    leaves: &GatModel<S>,
    grads: &GradientMap<S>,
    state: &mut AdamState<S>,
    config: &TrainConfig,
) -> Result<()> {
    let b1 = S::from_f64_lossy(config.beta1);
    let b2 = S::from_f64_lossy(config.beta2);
    let lr = S::from_f64_lossy(config.learning_rate);
    let eps = S::from_f64_lossy(config.epsilon);
    state.step += 1;
    let t = state.step as i32;
    let corr1 = S::one() - b1.powi(t);
    let corr2 = S::one() - b2.powi(t);

    let leaf_params = leaves.parameters();
    let mut params = model.parameters_mut();
    if leaf_params.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Shape("optimizer state misaligned with model".into()));
    }
    for (i, param) in params.iter_mut().enumerate() {
        let grad = grads.grad_of(leaf_params[i])?;
        if grad.len() != param.len() {
            return Err(Error::Shape(format!(
                "gradient of {} values for a parameter of {}",
                grad.len(),
                param.len()
            )));
        }
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let mut values = param.to_vec();
        for (j, g) in grad.values().iter().enumerate() {
            m[j] = b1 * m[j] + (S::one() - b1) * *g;
            v[j] = b2 * v[j] + (S::one() - b2) * *g * *g;
            let m_hat = m[j] / corr1;
            let v_hat = v[j] / corr2;
            values[j] = values[j] - lr * m_hat / (v_hat.sqrt() + eps);
        }
        **param = param.with_values(values)?;
    }
    Ok(())
}

/// A frame prepared for the model: masked cloud, normalized features, its
/// graph, and the normalization statistics.
#[derive(Debug, Clone)]
pub struct PreparedFrame {
    pub frame: MaskedFrame,
    pub graph: KnnGraph,
    pub features: Tensor<f64>,
    pub stats: NormStats,
}

impl PreparedFrame {
    pub fn build(frame: MaskedFrame, graph: KnnGraph, model_features: &[Feature]) -> Result<Self> {
        let (features, stats) = normalize_frame(&frame, model_features)?;
        Ok(PreparedFrame {
            frame,
            graph,
            features,
            stats,
        })
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy)]
pub struct EpochLog {
    pub epoch: u32,
    /// Mean step loss (normalized space).
    pub train_loss: f64,
    /// Pooled masked MSE on validation frames, physical units (m²).
    pub val_loss: f64,
    pub seconds: f64,
}

/// Index split into train/validation sets.
pub fn split_frames(
    n: usize,
    fraction: f64,
    shuffle_seed: Option<u64>,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Data(
            "training needs at least two frames (one train, one validation)".into(),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(seed) = shuffle_seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
    }
    let n_val = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let val = order.split_off(n - n_val);
    Ok((order, val))
}

/// Masked squared error of `model` on `frame`, in physical units, pooled as
/// (sum of squared errors, masked count).
fn frame_sq_error(model: &GatModel<f64>, frame: &PreparedFrame) -> Result<(f64, usize)> {
    let mut tape = Tape::new();
    tape.set_tracking(false);
    let z = model_forward(&mut tape, &frame.features, &frame.graph, model, false, 0)?;
    let masked = frame.frame.masked_indices();
    let mut sum = 0.0;
    for (truth, &i) in frame.frame.truth_z.iter().zip(&masked) {
        let pred = frame.stats.denormalize_z(z.values()[i])?;
        let d = pred - truth;
        sum += d * d;
    }
    Ok((sum, masked.len()))
}

/// Pooled validation MSE in physical units, accumulated in frame order.
pub fn validation_mse(model: &GatModel<f64>, frames: &[&PreparedFrame]) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for f in frames {
        let (s, c) = frame_sq_error(model, f)?;
        sum += s;
        count += c;
    }
    if count == 0 {
        return Err(Error::Data("validation frames have no masked points".into()));
    }
    Ok(sum / count as f64)
}

/// Train with one frame per optimization step, shuffling frame order each
/// epoch, validating after every epoch, and returning the best checkpoint by
/// validation loss together with the per-epoch log.
pub fn train(
    frames: &[PreparedFrame],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<(GatModel<f64>, Vec<EpochLog>)> {
    train_with_progress(frames, model_config, train_config, |_| {})
}

/// [`train`] with a per-epoch observer (progress printing, live logging).
pub fn train_with_progress(
    frames: &[PreparedFrame],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(GatModel<f64>, Vec<EpochLog>)> {
    model_config.validate()?;
    train_config.validate()?;
    let (train_idx, val_idx) = split_frames(
        frames.len(),
        train_config.split_fraction,
        train_config.split_shuffle_seed,
    )?;
    let train_frames: Vec<&PreparedFrame> = train_idx.iter().map(|&i| &frames[i]).collect();
    let val_frames: Vec<&PreparedFrame> = val_idx.iter().map(|&i| &frames[i]).collect();
    if train_frames.is_empty() || val_frames.is_empty() {
        return Err(Error::Data("empty train or validation split".into()));
    }

    let mut model: GatModel<f64> = crate::gat::init_params(model_config, train_config.seed)?;
    let mut state = AdamState::new(&model);
    let mut order: Vec<usize> = (0..train_frames.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(train_config.seed, 0xE70C));

    let mut best_model = model.clone();
    let mut best_val = f64::INFINITY;
    let mut epochs_since_best = 0u32;
    let mut log = Vec::new();

    for epoch in 0..train_config.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (step, &fi) in order.iter().enumerate() {
            let frame = train_frames[fi];
            let mut tape = Tape::new();
            let tracked = model.tracked(&mut tape);
            let step_seed = mix_seed(
                train_config.seed,
                (epoch as u64) << 32 | (step as u64) << 8 | 1,
            );
            let z = model_forward(
                &mut tape,
                &frame.features,
                &frame.graph,
                &tracked,
                true,
                step_seed,
            )?;
            let loss = loss_masked_mse(&mut tape, &z, &frame.frame, &frame.stats)?;
            loss_sum += loss.item();
            let grads = tape.backward(&loss)?;
            adam_step(&mut model, &tracked, &grads, &mut state, train_config)?;
        }
        let val_loss = validation_mse(&model, &val_frames)?;
        if val_loss < best_val {
            best_val = val_loss;
            best_model = model.clone();
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
        }
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / train_frames.len() as f64,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&entry);
        log.push(entry);
        if epochs_since_best > train_config.patience {
            break;
        }
    }
    Ok((best_model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beam::{apply_channel_dropout, DropoutPattern, SensorSpec};
    use crate::cloud::{Point, PointCloud};
    use crate::gat::init_params;
    use crate::graph::{build_knn, GraphSpace};

    fn toy_masked_frame() -> MaskedFrame {
        let spec = SensorSpec::new(4, -0.4, -0.1, 1.0).unwrap();
        let mut points = Vec::new();
        for b in 0..4u32 {
            for j in 0..6 {
                let mut p = Point::new(
                    j as f64,
                    b as f64 * 0.5,
                    -1.0 + 0.2 * b as f64 + 0.01 * j as f64,
                    0.5,
                );
                p.beam = Some(b);
                points.push(p);
            }
        }
        let cloud = PointCloud::new("toy", points).with_sensor(spec);
        apply_channel_dropout(&cloud, &DropoutPattern::EveryNth { n: 2, phase_offset: 0 }, 4)
            .unwrap()
    }

    #[test]
    fn normalization_stats_from_observed_points_only() {
        let frame = toy_masked_frame();
        let feats = Feature::all();
        let (x, stats) = normalize_frame(&frame, &feats).unwrap();
        assert_eq!(x.shape(), &[24, 6]);
        // observed z values live on beams 1 and 3
        let observed: Vec<f64> = frame
            .cloud
            .points
            .iter()
            .zip(frame.unmask().points.iter())
            .filter(|(p, _)| !p.masked)
            .map(|(_, o)| o.z)
            .collect();
        let mu = observed.iter().sum::<f64>() / observed.len() as f64;
        let zi = feats.iter().position(|f| *f == Feature::ZMasked).unwrap();
        assert!((stats.mean[zi] - mu).abs() < 1e-12);
        // masked z entries are exactly the sentinel 0 in feature space
        for (i, p) in frame.cloud.points.iter().enumerate() {
            if p.masked {
                assert_eq!(x.get(i, zi), 0.0);
                let mi = feats.iter().position(|f| *f == Feature::MaskFlag).unwrap();
                assert_eq!(x.get(i, mi), 1.0);
            }
        }
    }

    #[test]
    fn constant_feature_normalizes_to_zero() {
        let frame = toy_masked_frame(); // reflectance constant 0.5
        let feats = vec![Feature::Reflectance];
        let (x, stats) = normalize_frame(&frame, &feats).unwrap();
        assert!(stats.std[0] <= 1e-6 + 1e-18);
        for v in x.values() {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn two_point_z_normalizes_to_unit_values() {
        // observed z in {-1, +1}: mean 0, std 1, so values normalize to ±1
        let mut points = vec![
            Point::new(0.0, 0.0, -1.0, 0.5),
            Point::new(1.0, 0.0, 1.0, 0.5),
            Point::new(2.0, 0.0, 0.0, 0.5),
        ];
        for (b, p) in points.iter_mut().enumerate() {
            p.beam = Some(b as u32);
        }
        let cloud = PointCloud::new("z", points);
        let frame = apply_channel_dropout(
            &cloud,
            &DropoutPattern::ContiguousBand { start: 2, len: 1 },
            3,
        )
        .unwrap();
        let (x, stats) = normalize_frame(&frame, &[Feature::ZMasked]).unwrap();
        assert_eq!(x.values()[0], -1.0);
        assert_eq!(x.values()[1], 1.0);
        // round trip for observed values
        for z in [-1.0, 1.0] {
            let back = stats.denormalize_z(stats.normalize_z(z).unwrap()).unwrap();
            assert!((back - z).abs() < 1e-12);
        }
    }

    #[test]
    fn fully_masked_frame_rejected() {
        let mut frame = toy_masked_frame();
        for p in &mut frame.cloud.points {
            p.masked = true;
        }
        assert!(normalize_frame(&frame, &Feature::all()).is_err());
    }

    #[test]
    fn loss_zero_on_perfect_prediction_and_offset_squared() {
        let frame = toy_masked_frame();
        let (_, stats) = normalize_frame(&frame, &Feature::all()).unwrap();
        let n = frame.cloud.len();
        // build predictions equal to normalized truth
        let mut z_hat = vec![0.0; n];
        let masked = frame.masked_indices();
        for (t, &i) in frame.truth_z.iter().zip(&masked) {
            z_hat[i] = stats.normalize_z(*t).unwrap();
        }
        let mut tape = Tape::new();
        let perfect = Tensor::from_parts(vec![n, 1], z_hat.clone());
        let loss = loss_masked_mse(&mut tape, &perfect, &frame, &stats).unwrap();
        assert!(loss.item().abs() < 1e-24);

        // constant offset δ on every masked node gives δ²
        let delta = 0.37;
        for &i in &masked {
            z_hat[i] += delta;
        }
        let offset = Tensor::from_parts(vec![n, 1], z_hat);
        let loss = loss_masked_mse(&mut tape, &offset, &frame, &stats).unwrap();
        assert!((loss.item() - delta * delta).abs() < 1e-12);
    }

    #[test]
    fn loss_gradient_matches_analytic_form() {
        // d/dẑ of mean over M masked nodes of (ẑ−z̃)² is 2(ẑ−z̃)/M
        let frame = toy_masked_frame();
        let (_, stats) = normalize_frame(&frame, &Feature::all()).unwrap();
        let n = frame.cloud.len();
        let masked = frame.masked_indices();
        let m = masked.len() as f64;
        let values: Vec<f64> = (0..n).map(|i| 0.1 * i as f64 - 0.5).collect();

        let mut tape = Tape::new();
        let z_hat = tape.leaf(&Tensor::from_parts(vec![n, 1], values.clone()));
        let loss = loss_masked_mse(&mut tape, &z_hat, &frame, &stats).unwrap();
        let grads = tape.backward(&loss).unwrap();
        let g = grads.grad_of(&z_hat).unwrap();
        for (i, gv) in g.values().iter().enumerate() {
            if let Some(k) = masked.iter().position(|&mi| mi == i) {
                let expect =
                    2.0 * (values[i] - stats.normalize_z(frame.truth_z[k]).unwrap()) / m;
                assert!((gv - expect).abs() < 1e-12, "node {i}: {gv} vs {expect}");
            } else {
                assert_eq!(*gv, 0.0);
            }
        }
    }

    #[test]
    fn adam_first_step_magnitude_and_zero_grad() {
        // single scalar parameter with gradient g: first update is
        // -lr·g/(|g| + ε·√(1−β₂)/ (1−β₁)) ≈ -lr·sign(g)
        let cfg = ModelConfig {
            layers: 1,
            heads: 1,
            hidden: 1,
            head_hidden: 1,
            dropout_rate: 0.0,
            activation: crate::gat::Activation::Elu,
            residual: false,
            input_features: vec![Feature::ZMasked],
        };
        let mut model: GatModel<f64> = init_params(&cfg, 3).unwrap();
        let before: Vec<f64> = model.parameters().iter().map(|p| p.values()[0]).collect();

        // run one real training step on a trivial frame to produce gradients
        let frame = toy_masked_frame();
        let prepared = PreparedFrame::build(
            frame,
            build_knn(&toy_masked_frame().cloud, 3, GraphSpace::XyOnly, true).unwrap(),
            &cfg.input_features,
        )
        .unwrap();
        let tc = TrainConfig::default();
        let mut state = AdamState::new(&model);
        let mut tape = Tape::new();
        let tracked = model.tracked(&mut tape);
        let z = model_forward(&mut tape, &prepared.features, &prepared.graph, &tracked, false, 0)
            .unwrap();
        let loss = loss_masked_mse(&mut tape, &z, &prepared.frame, &prepared.stats).unwrap();
        let grads = tape.backward(&loss).unwrap();
        let grad_vals: Vec<f64> = tracked
            .parameters()
            .iter()
            .map(|p| grads.grad_of(p).unwrap().values()[0])
            .collect();
        adam_step(&mut model, &tracked, &grads, &mut state, &tc).unwrap();
        for ((b, a), g) in before
            .iter()
            .zip(model.parameters().iter().map(|p| p.values()[0]))
            .zip(&grad_vals)
        {
            let delta = a - b;
            if *g == 0.0 {
                assert_eq!(delta, 0.0);
            } else {
                assert!((delta.abs() - tc.learning_rate).abs() < tc.learning_rate * 0.01);
                assert_eq!(delta.signum(), -g.signum());
            }
        }
    }

    #[test]
    fn adam_with_zero_learning_rate_is_identity() {
        let cfg = ModelConfig {
            layers: 1,
            heads: 2,
            hidden: 4,
            head_hidden: 3,
            dropout_rate: 0.0,
            activation: crate::gat::Activation::Elu,
            residual: false,
            input_features: Feature::all(),
        };
        let mut model: GatModel<f64> = init_params(&cfg, 5).unwrap();
        let reference = model.clone();
        let frame = toy_masked_frame();
        let prepared = PreparedFrame::build(
            frame.clone(),
            build_knn(&frame.cloud, 3, GraphSpace::XyOnly, true).unwrap(),
            &cfg.input_features,
        )
        .unwrap();
        let tc = TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        let mut state = AdamState::new(&model);
        let mut tape = Tape::new();
        let tracked = model.tracked(&mut tape);
        let z = model_forward(&mut tape, &prepared.features, &prepared.graph, &tracked, false, 0)
            .unwrap();
        let loss = loss_masked_mse(&mut tape, &z, &prepared.frame, &prepared.stats).unwrap();
        let grads = tape.backward(&loss).unwrap();
        adam_step(&mut model, &tracked, &grads, &mut state, &tc).unwrap();
        assert_eq!(model, reference);
    }

    #[test]
    fn adam_converges_on_scalar_quadratic() {
        // minimize (w−3)² from w = 0 with lr 0.1: |w−3| < 0.05 in 200 steps
        let mut w = Tensor::from_parts(vec![1], vec![0.0]);
        let tc = TrainConfig {
            learning_rate: 0.1,
            ..Default::default()
        };
        let mut m = vec![0.0f64];
        let mut v = vec![0.0f64];
        for t in 1..=200 {
            let g = 2.0 * (w.values()[0] - 3.0);
            m[0] = tc.beta1 * m[0] + (1.0 - tc.beta1) * g;
            v[0] = tc.beta2 * v[0] + (1.0 - tc.beta2) * g * g;
            let m_hat = m[0] / (1.0 - tc.beta1.powi(t));
            let v_hat = v[0] / (1.0 - tc.beta2.powi(t));
            let next = w.values()[0] - tc.learning_rate * m_hat / (v_hat.sqrt() + tc.epsilon);
            w = w.with_values(vec![next]).unwrap();
        }
        assert!(
            (w.values()[0] - 3.0).abs() < 0.05,
            "w = {} after 200 steps",
            w.values()[0]
        );
    }

    #[test]
    fn split_by_index_takes_tail() {
        let (train, val) = split_frames(10, 0.2, None).unwrap();
        assert_eq!(train, vec![0, 1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(val, vec![8, 9]);
        let (train, val) = split_frames(2, 0.0, None).unwrap();
        assert_eq!((train.len(), val.len()), (1, 1));
        assert!(split_frames(1, 0.2, None).is_err());
    }

    #[test]
    fn split_with_shuffle_is_seeded() {
        let a = split_frames(20, 0.25, Some(5)).unwrap();
        let b = split_frames(20, 0.25, Some(5)).unwrap();
        let c = split_frames(20, 0.25, Some(6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.1.len(), 5);
    }
}
