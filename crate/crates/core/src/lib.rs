//! Convolutional networks whose convolution inner product can be swapped for a
//! weighted L1/L2 distance, trained end-to-end with hand-written backward passes.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense `f64` tensors and the im2col/col2im patch transforms.
//! - [`kernels`]: weighted distances, Gaussian/Laplacian similarities and the
//!   chi-squared threshold construction.
//! - [`layers`]: convolution, distance convolution, AdaptiveLinear, activations,
//!   pooling, fully connected and softmax loss.
//! - [`network`]: layer stacks, parameter registry and snapshots.
//! - [`init`]: fillers plus the precision-adjustment and whole-network
//!   data-dependent initializers.
//! - [`optim`]: momentum SGD, the inverse-decay schedule and the training loop.
//! - [`data`]: IDX (MNIST) loading and seeded batching.
//! - [`stats`]: run summaries and Welch's t-test.
//! - [`gradcheck`]: finite-difference and oracle-equivalence suites.

pub mod data;
mod error;
pub mod gradcheck;
pub mod init;
pub mod kernels;
pub mod layers;
pub mod network;
pub mod optim;
pub mod special;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};
pub use network::{LayerSpec, Network, NetworkSpec};
pub use tensor::{PatchMatrix, Tensor};
