//! Minimal dense-tensor arithmetic with reverse-mode gradients, Adam,
//! and global-norm gradient clipping.

pub mod optim;
pub mod tape;
pub mod tensor;

pub use optim::{adam_step, clip_gradients, sgd_step, AdamState};
pub use tape::{NodeId, Tape};
pub use tensor::{linear_forward, relu, softmax, Parameter, Tensor};
