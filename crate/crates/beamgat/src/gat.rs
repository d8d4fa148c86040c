//! Multi-head graph attention network with an elevation regression head.
//!
//! Each layer projects node features per head, scores every edge with
//! `LeakyReLU(aᵀ[Wh_i ‖ Wh_j])`, softmax-normalizes scores over each
//! destination's neighborhood, aggregates the projected neighbor features
//! with those weights, applies the nonlinearity, and concatenates the head
//! outputs. Residual connections apply whenever the widths match, and
//! feature dropout runs between layers during training. A two-layer perceptron
//! on the final embedding predicts one elevation per node.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::graph::KnnGraph;
use crate::mix_seed;
use crate::scalar::Scalar;

/// Negative-side slope used both for attention scoring and the head's
/// nonlinearity.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Nonlinearity applied to the aggregated head outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Elu,
    LeakyRelu,
}

/// Per-node input features, in column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    X,
    Y,
    ZMasked,
    Reflectance,
    MaskFlag,
    BeamNorm,
}

impl Feature {
    pub fn all() -> Vec<Feature> {
        vec![
            Feature::X,
            Feature::Y,
            Feature::ZMasked,
            Feature::Reflectance,
            Feature::MaskFlag,
            Feature::BeamNorm,
        ]
    }

    fn code(self) -> u8 {
        match self {
            Feature::X => 0,
            Feature::Y => 1,
            Feature::ZMasked => 2,
            Feature::Reflectance => 3,
            Feature::MaskFlag => 4,
            Feature::BeamNorm => 5,
        }
    }

    fn from_code(c: u8) -> Option<Feature> {
        Some(match c {
            0 => Feature::X,
            1 => Feature::Y,
            2 => Feature::ZMasked,
            3 => Feature::Reflectance,
            4 => Feature::MaskFlag,
            5 => Feature::BeamNorm,
            _ => return None,
        })
    }
}

/// Architecture of the attention stack and regression head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Number of stacked attention layers (L).
    pub layers: usize,
    /// Attention heads per layer (K).
    pub heads: usize,
    /// Total hidden width K·F′ after head concatenation.
    pub hidden: usize,
    /// Hidden width of the regression head.
    pub head_hidden: usize,
    pub dropout_rate: f64,
    pub activation: Activation,
    pub residual: bool,
    pub input_features: Vec<Feature>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 3,
            heads: 8,
            hidden: 256,
            head_hidden: 64,
            dropout_rate: 0.2,
            activation: Activation::Elu,
            residual: true,
            input_features: Feature::all(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("model needs at least one attention layer".into()));
        }
        if self.heads == 0 || self.hidden == 0 || self.head_hidden == 0 {
            return Err(Error::Config("model widths must be positive".into()));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden width {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.input_features.is_empty() {
            return Err(Error::Config("model needs at least one input feature".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for f in &self.input_features {
            if !seen.insert(f.code()) {
                return Err(Error::Config(format!("duplicate input feature {f:?}")));
            }
        }
        Ok(())
    }

    /// Per-head output width F′.
    pub fn per_head_width(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn input_dim(&self) -> usize {
        self.input_features.len()
    }
}

/// One attention head: projection `w` (F′×F_in) and scoring vector `a`
/// (2F′×1, destination half first).
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<S: Scalar> {
    pub w: Tensor<S>,
    pub a: Tensor<S>,
}

/// Parameters of one attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GatLayerParams<S: Scalar> {
    pub heads: Vec<HeadParams<S>>,
}

/// The full model: L attention layers plus the two-layer regression head.
#[derive(Debug, Clone, PartialEq)]
pub struct GatModel<S: Scalar> {
    pub config: ModelConfig,
    pub layers: Vec<GatLayerParams<S>>,
    pub head_w1: Tensor<S>,
    pub head_b1: Tensor<S>,
    pub head_w2: Tensor<S>,
    pub head_b2: Tensor<S>,
}

fn glorot_uniform<S: Scalar>(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    fan_in: usize,
    fan_out: usize,
) -> Tensor<S> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let values = (0..rows * cols)
        .map(|_| S::from_f64_lossy(rng.gen_range(-limit..limit)))
        .collect();
    Tensor::from_parts(vec![rows, cols], values)
}

/// Glorot-uniform initialization of all projection/scoring/head weights,
/// zero biases; bitwise deterministic per seed.
pub fn init_params<S: Scalar>(config: &ModelConfig, seed: u64) -> Result<GatModel<S>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fp = config.per_head_width();
    let mut layers = Vec::with_capacity(config.layers);
    let mut f_in = config.input_dim();
    for _ in 0..config.layers {
        let heads = (0..config.heads)
            .map(|_| HeadParams {
                w: glorot_uniform(&mut rng, fp, f_in, f_in, fp),
                a: glorot_uniform(&mut rng, 2 * fp, 1, 2 * fp, 1),
            })
            .collect();
        layers.push(GatLayerParams { heads });
        f_in = config.hidden;
    }
    let head_w1 = glorot_uniform(&mut rng, config.head_hidden, config.hidden, config.hidden, config.head_hidden);
    let head_w2 = glorot_uniform(&mut rng, 1, config.head_hidden, config.head_hidden, 1);
    Ok(GatModel {
        config: config.clone(),
        layers,
        head_w1,
        head_b1: Tensor::zeros(&[config.head_hidden]),
        head_w2,
        head_b2: Tensor::zeros(&[1]),
    })
}

impl<S: Scalar> GatModel<S> {
    /// Parameters in canonical order: per layer, per head `w` then `a`;
    /// then `head_w1`, `head_b1`, `head_w2`, `head_b2`.
    pub fn parameters(&self) -> Vec<&Tensor<S>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for head in &layer.heads {
                out.push(&head.w);
                out.push(&head.a);
            }
        }
        out.push(&self.head_w1);
        out.push(&self.head_b1);
        out.push(&self.head_w2);
        out.push(&self.head_b2);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            for head in &mut layer.heads {
                out.push(&mut head.w);
                out.push(&mut head.a);
            }
        }
        out.push(&mut self.head_w1);
        out.push(&mut self.head_b1);
        out.push(&mut self.head_w2);
        out.push(&mut self.head_b2);
        out
    }

    pub fn n_parameters(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    /// Copy of the model whose parameters are leaves on `tape`, so a forward
    /// pass through it accumulates gradients for every parameter.
    pub fn tracked(&self, tape: &mut Tape<S>) -> GatModel<S> {
        let mut out = self.clone();
        for p in out.parameters_mut() {
            *p = tape.leaf(p);
        }
        out
    }
}

fn activation_op<S: Scalar>(tape: &mut Tape<S>, x: &Tensor<S>, act: Activation) -> Tensor<S> {
    match act {
        Activation::Elu => tape.elu(x),
        Activation::LeakyRelu => tape.leaky_relu(x, S::from_f64_lossy(LEAKY_SLOPE)),
    }
}

/// One attention layer over the CSR graph.
///
/// `dropout_seed` only matters while `training` is set and the configured
/// dropout rate is positive.
pub fn gat_layer_forward<S: Scalar>(
    tape: &mut Tape<S>,
    h: &Tensor<S>,
    graph: &KnnGraph,
    params: &GatLayerParams<S>,
    config: &ModelConfig,
    training: bool,
    dropout_seed: u64,
) -> Result<Tensor<S>> {
    let n = h.rows();
    if graph.n_nodes() != n {
        return Err(Error::Shape(format!(
            "graph over {} nodes applied to {} feature rows",
            graph.n_nodes(),
            n
        )));
    }
    let fp = config.per_head_width();
    let slope = S::from_f64_lossy(LEAKY_SLOPE);
    let mut head_outputs = Vec::with_capacity(params.heads.len());
    for head in &params.heads {
        if head.w.cols() != h.cols() {
            return Err(Error::Shape(format!(
                "head projection expects {} input features, got {}",
                head.w.cols(),
                h.cols()
            )));
        }
        // shared linear projection of all nodes
        let projected = tape.matmul_nt(h, &head.w)?;
        // split the scoring vector into destination and source halves, so the
        // edge score decomposes as s[dst] + t[src]
        let a_dst = tape.slice_rows(&head.a, 0, fp)?;
        let a_src = tape.slice_rows(&head.a, fp, fp)?;
        let s = tape.matmul(&projected, &a_dst)?;
        let t = tape.matmul(&projected, &a_src)?;
        let s_e = tape.gather_rows(&s, graph.dst_of_edge())?;
        let t_e = tape.gather_rows(&t, graph.neighbors())?;
        let scores = tape.add(&s_e, &t_e)?;
        let scores = tape.leaky_relu(&scores, slope);
        let alpha = tape.segment_softmax(&scores, graph.offsets())?;
        let messages = tape.gather_rows(&projected, graph.neighbors())?;
        let aggregated = tape.segment_weighted_sum(&alpha, &messages, graph.offsets())?;
        head_outputs.push(activation_op(tape, &aggregated, config.activation));
    }
    let mut out = tape.concat_columns(&head_outputs)?;
    if config.residual && h.cols() == out.cols() {
        out = tape.add(&out, h)?;
    }
    tape.dropout(&out, config.dropout_rate, dropout_seed, training)
}

/// Full forward pass: L attention layers then the regression head. Returns
/// one predicted elevation per node (N×1), in node order and in the
/// normalized feature space of the inputs.
pub fn model_forward<S: Scalar>(
    tape: &mut Tape<S>,
    features: &Tensor<S>,
    graph: &KnnGraph,
    model: &GatModel<S>,
    training: bool,
    step_seed: u64,
) -> Result<Tensor<S>> {
    if features.cols() != model.config.input_dim() {
        return Err(Error::Shape(format!(
            "model expects {} input features, got {}",
            model.config.input_dim(),
            features.cols()
        )));
    }
    let mut h = features.clone();
    for (l, layer) in model.layers.iter().enumerate() {
        h = gat_layer_forward(
            tape,
            &h,
            graph,
            layer,
            &model.config,
            training,
            mix_seed(step_seed, l as u64),
        )?;
    }
    let slope = S::from_f64_lossy(LEAKY_SLOPE);
    let z1 = tape.matmul_nt(&h, &model.head_w1)?;
    let z1 = tape.add_bias_row(&z1, &model.head_b1)?;
    let a1 = tape.leaky_relu(&z1, slope);
    let z2 = tape.matmul_nt(&a1, &model.head_w2)?;
    tape.add_bias_row(&z2, &model.head_b2)
}

// ── model container ──────────────────────────────────────────────────

const MODEL_MAGIC: &[u8; 4] = b"BGAT";
const MODEL_VERSION: u32 = 1;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "truncated model file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Serialize the model: magic, version, config header, then every parameter
/// as shape + row-major 64-bit values. `load_model(save_model(m)) == m`
/// bitwise for the f64 instantiation.
pub fn save_model<S: Scalar>(model: &GatModel<S>, path: &Path) -> Result<()> {
    let cfg = &model.config;
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MODEL_MAGIC);
    bytes.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    for v in [cfg.layers, cfg.heads, cfg.hidden, cfg.head_hidden] {
        bytes.extend_from_slice(&(v as u32).to_le_bytes());
    }
    bytes.extend_from_slice(&cfg.dropout_rate.to_le_bytes());
    bytes.push(match cfg.activation {
        Activation::Elu => 0,
        Activation::LeakyRelu => 1,
    });
    bytes.push(cfg.residual as u8);
    bytes.push(cfg.input_features.len() as u8);
    for f in &cfg.input_features {
        bytes.push(f.code());
    }
    let params = model.parameters();
    bytes.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        bytes.push(p.shape().len() as u8);
        for d in p.shape() {
            bytes.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in p.values() {
            bytes.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
    }
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))
}

/// Load a model written by [`save_model`].
pub fn load_model<S: Scalar>(path: &Path) -> Result<GatModel<S>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if cur.take(4)? != MODEL_MAGIC {
        return Err(Error::format(path, "not a model file (bad magic)"));
    }
    let version = cur.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::format(
            path,
            format!("model container version {version}, this build reads {MODEL_VERSION}"),
        ));
    }
    let layers = cur.u32()? as usize;
    let heads = cur.u32()? as usize;
    let hidden = cur.u32()? as usize;
    let head_hidden = cur.u32()? as usize;
    let dropout_rate = cur.f64()?;
    let activation = match cur.u8()? {
        0 => Activation::Elu,
        1 => Activation::LeakyRelu,
        other => return Err(Error::format(path, format!("unknown activation code {other}"))),
    };
    let residual = cur.u8()? != 0;
    let n_features = cur.u8()? as usize;
    let mut input_features = Vec::with_capacity(n_features);
    for _ in 0..n_features {
        let code = cur.u8()?;
        input_features.push(Feature::from_code(code).ok_or_else(|| {
            Error::format(path, format!("unknown feature code {code}"))
        })?);
    }
    let config = ModelConfig {
        layers,
        heads,
        hidden,
        head_hidden,
        dropout_rate,
        activation,
        residual,
        input_features,
    };
    config.validate()?;

    let n_params = cur.u32()? as usize;
    let expected_params = layers * heads * 2 + 4;
    if n_params != expected_params {
        return Err(Error::format(
            path,
            format!("{n_params} parameters in file, architecture needs {expected_params}"),
        ));
    }

    let mut read_param = |expect: &[usize]| -> Result<Tensor<S>> {
        let ndim = cur.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u32()? as usize);
        }
        if shape != expect {
            return Err(Error::format(
                path,
                format!("parameter shape {shape:?} does not match expected {expect:?}"),
            ));
        }
        let len: usize = shape.iter().product();
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            values.push(S::from_f64_lossy(cur.f64()?));
        }
        Ok(Tensor::from_parts(shape, values))
    };

    let fp = config.per_head_width();
    let mut f_in = config.input_dim();
    let mut layer_params = Vec::with_capacity(layers);
    for _ in 0..layers {
        let mut heads_vec = Vec::with_capacity(heads);
        for _ in 0..heads {
            let w = read_param(&[fp, f_in])?;
            let a = read_param(&[2 * fp, 1])?;
            heads_vec.push(HeadParams { w, a });
        }
        layer_params.push(GatLayerParams { heads: heads_vec });
        f_in = hidden;
    }
    let head_w1 = read_param(&[head_hidden, hidden])?;
    let head_b1 = read_param(&[head_hidden])?;
    let head_w2 = read_param(&[1, head_hidden])?;
    let head_b2 = read_param(&[1])?;
    if cur.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after model payload"));
    }
    Ok(GatModel {
        config,
        layers: layer_params,
        head_w1,
        head_b1,
        head_w2,
        head_b2,
    })
}
