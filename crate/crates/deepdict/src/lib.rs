//! Greedy layer-wise dictionary learning.
//!
//! A deep dictionary model factorizes a sample matrix `X` (features in
//! rows, samples in columns) into a chain of dictionaries
//! `X ≈ D1 D2 … DL Z`. Layers are trained greedily: each inner layer is a
//! dense least-squares factorization whose coefficients become the next
//! layer's input, and the final layer is an l1-regularized sparse coding
//! problem solved by iterative soft thresholding. The coefficients of the
//! final layer serve as learned features for downstream classification.
//!
//! Modules:
//! - [`dataio`]: binary image/label readers and a text matrix format
//! - [`shallow`]: single-layer training primitives (init, coding, updates)
//! - [`deep`]: multi-layer training, encoding, and reconstruction
//! - [`classify`]: nearest-neighbor evaluation of learned features
//! - [`persist`]: versioned binary container for models and features
//! - [`linalg`]: deterministic chunk-parallel kernels used throughout

pub mod classify;
pub mod dataio;
pub mod deep;
mod error;
pub mod linalg;
pub mod persist;
pub mod shallow;

pub use error::{Error, Result};
