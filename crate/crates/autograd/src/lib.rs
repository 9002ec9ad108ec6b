//! A small reverse-mode automatic differentiation engine over
//! `ndarray::ArrayD<f64>`, built for models a desk-scale CPU can train
//! deterministically.
//!
//! Design points:
//!
//! - **f64 everywhere.** Double precision keeps central-difference gradient
//!   checks meaningful down to relative errors of 1e-6 and below.
//! - **Single-threaded, fixed iteration order.** Two runs from the same seed
//!   produce bit-identical parameters.
//! - **Constant folding of frozen branches.** An op whose inputs are all
//!   constants produces a constant, so a frozen encoder contributes nothing
//!   to the backward sweep.
//!
//! The building blocks are deliberately low-level (convolutions, norms,
//! attention primitives, resampling); model architecture lives with the
//! callers.

pub mod conv;
pub mod init;
pub mod norm;
pub mod ops;
pub mod optim;
pub mod params;
pub mod resize;
pub mod tensor;

pub use conv::{conv2d, conv_transpose2d, Conv2dSpec};
pub use init::{he_normal, normal, ones, xavier_uniform, zeros};
pub use norm::{batch_norm2d, layer_norm_channels, layer_norm_last};
pub use params::{Binder, ParamKind, ParamSet};
pub use resize::{bilinear_resize, global_avg_pool};
pub use tensor::{GradStore, Tensor};
