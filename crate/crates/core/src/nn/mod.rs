//! Minimal dense-tensor arithmetic with reverse-mode gradients, the
//! primitive layers the matcher is built from, and the Adam optimizer.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod param;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use layers::{BatchNorm, Linear, PRelu};
pub use param::{BatchNormState, Mode, ParamId, ParamStore, Parameter};
pub use tape::{SparseRows, Tape, Var, XentBlock};
pub use tensor::Tensor;
