//! Dense `f64` tensors and a reverse-mode tape covering the primitives of a
//! raw-waveform speaker-embedding network: strided/dilated/grouped 1-D
//! convolution, transposed convolution, pooling, PReLU, softmax, global layer
//! norm, batch norm and affine maps.
//!
//! Forward kernels in [`ops`] are pure functions; [`Tape`] records them and
//! replays their adjoints.

mod error;
pub mod gradcheck;
pub mod ops;
mod param;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{finite_diff_check, GradCheckOptions, GradCheckReport};
pub use ops::basic::Activation;
pub use ops::conv::{Conv1dSpec, Padding};
pub use ops::norm::Mode;
pub use ops::pool::PoolKind;
pub use param::{Buffer, BufferId, ParamId, ParamStore, Parameter};
pub use tape::{CustomOp, Gradients, Tape, Var, SQRT_GRAD_FLOOR};
pub use tensor::Tensor;
