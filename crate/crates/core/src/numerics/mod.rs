//! Dense tensors, reverse-mode autodiff, AdamW and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use optim::{AdamW, CosineSchedule};
pub use tape::{BatchStats, Grads, Tape, Var};
pub use tensor::{masked_softmax, Real, Tensor};

#[cfg(test)]
mod tape_tests;
