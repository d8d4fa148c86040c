//! LiDAR beam-dropout simulation and graph-attention elevation recovery.
//!
//! A spinning LiDAR loses whole vertical channels under sensor degradation;
//! every return of the dropped beams keeps its `(x, y)` and beam index but its
//! elevation becomes unknown. This crate provides the full toolchain to study
//! and repair that failure mode:
//!
//! - a synthetic spinning-LiDAR raycaster with exact ground truth ([`synth`]),
//! - KITTI `.bin` / CSV / PLY point-cloud I/O ([`io`]),
//! - beam geometry, channel-dropout patterns and masked frames ([`beam`]),
//! - a kNN spatial graph in CSR form with a brute-force oracle ([`graph`]),
//! - a dense-tensor core with reverse-mode differentiation ([`autodiff`]),
//! - the multi-head graph attention model and elevation head ([`gat`]),
//! - Adam training with early stopping ([`train`]),
//! - the reconstruction metric suite ([`metrics`]),
//! - a config-driven CLI pipeline ([`config`], [`commands`]).
//!
//! The numeric core is generic over the scalar type via [`scalar::Scalar`];
//! the pipeline itself runs in `f64`, and the aliases at the crate root
//! ([`Tensor`], [`Tape`], [`GatModel`], ...) refer to the `f64`
//! instantiations.

pub mod autodiff;
pub mod beam;
pub mod cloud;
pub mod commands;
pub mod config;
pub mod error;
pub mod gat;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod scalar;
pub mod synth;
pub mod train;

pub use error::{Error, Result};

/// Derive a stream seed from a run seed and a stream index (splitmix64
/// finalizer), so per-frame/per-layer randomness stays decorrelated while
/// remaining reproducible.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Dense `f64` tensor used throughout the pipeline.
pub type Tensor = autodiff::Tensor<f64>;
/// Reverse-mode differentiation tape over `f64` tensors.
pub type Tape = autodiff::Tape<f64>;
/// Gradient map produced by [`Tape::backward`].
pub type GradientMap = autodiff::GradientMap<f64>;
/// The `f64` graph attention model.
pub type GatModel = gat::GatModel<f64>;
/// Adam optimizer state for the `f64` model.
pub type AdamState = train::AdamState<f64>;
