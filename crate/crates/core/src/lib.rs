//! Numeric substrate for staged RL computation graphs: typed spaces, dense
//! tensors with a fixed primitive vocabulary, and tape-based reverse-mode
//! differentiation.

pub mod error;
pub mod ops;
pub mod rng;
pub mod space;
pub mod tape;
pub mod tensor;

pub use error::{CoreError, Result};
pub use ops::{eval_kernel_op, eval_primitive, Attrs, KernelOp, OpCode};
pub use space::{fold_time_into_batch, unfold_time_from_batch, Space, SpaceSpec, Value};
pub use tape::{backward, finite_diff, TapeEntry};
pub use tensor::{broadcast_shapes, Buffer, DType, Tensor};
