//! Gaze-guided graph neural network image classifier.
//!
//! The pipeline turns a grayscale image plus an eye-gaze fixation stream into
//! a single graph: image patches become nodes, per-patch fixation time becomes
//! a node feature, learned positional codes shape both the features and the
//! k-nearest-neighbor edge structure. A stack of residual grapher blocks
//! (max-relative graph convolution + feed-forward, batch-statistics norm and
//! GELU inside each branch) classifies the pooled graph.
//!
//! Everything numeric is f64 and deterministic for a fixed seed, including
//! training. The autodiff engine ([`tape`]), optimizer, metrics, k-NN
//! construction, rasterization, and augmentation warps are implemented here
//! from first principles; external crates only handle plumbing (CLI, CSV,
//! JSON, PNG/PGM decoding, RNG streams, hashing).

pub mod augment;
pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gaze;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod tape;
pub mod tensor;
pub mod train;
#[doc(hidden)]
pub mod testkit;

pub use error::{Error, Result};
pub use tensor::Tensor;
