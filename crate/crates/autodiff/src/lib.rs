//! Reverse-mode automatic differentiation for small convolutional
//! classifiers.
//!
//! The primitive set is deliberately closed: strided 2-D convolution, batch
//! normalization, ReLU, residual addition, global average pooling, dense
//! layers, inverted dropout and softmax cross-entropy. Values are stored in
//! the tensor's element type (`f32` for training, `f64` for gradient checks);
//! reductions accumulate in `f64`.

pub mod checkpoint;
pub mod error;
#[cfg(any(test, feature = "gradcheck"))]
pub mod gradcheck;
pub mod optim;
pub mod real;
pub mod tape;
pub mod tensor;

pub use checkpoint::{Checkpoint, TensorEntry};
pub use error::{AutodiffError, Result};
pub use optim::{sgd_step, Sgd, SgdConfig};
pub use real::Real;
pub use tape::{conv_output_len, softmax_rows, BatchNormMode, BatchStats, Conv2dSpec, Tape, Var};
pub use tensor::Tensor;
