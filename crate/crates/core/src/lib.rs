//! Math core for decoupled static/dynamic video concept learning.
//!
//! Everything in this crate is pure computation over `f64` buffers: clip and
//! triplet construction, a tiny 3D-conv encoder with reverse-mode autodiff,
//! prototype concept codes with Sinkhorn-balanced soft targets, the bottleneck
//! and local-contrast losses, the SGD training loop, and the evaluation
//! metrics (linear probe, retrieval, code heatmaps, attention overlays).
//!
//! The crate is `no_std` (with `alloc`); all I/O, file formats and the CLI
//! live in the companion `vcl-cli` crate. Numerics are deterministic: the RNG
//! is a seeded splitmix64, transcendentals come from `libm`, and every
//! reduction runs in a fixed order regardless of the executor used.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod bottleneck;
pub mod concepts;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod exec;
pub mod graph;
pub mod localcontrast;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod trainer;
pub mod video;

pub use error::{Error, Result};
pub use tensor::Tensor;
