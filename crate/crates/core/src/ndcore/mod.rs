//! Deterministic numerical engine: tensors, reverse-mode autodiff, optimizers
//! and seeded random numbers.

pub mod nn;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use nn::{Activation, Dense, Mlp, ParamStore};
pub use optim::{OptimKind, OptimState};
pub use rng::Rng;
pub use tape::{sigmoid, Gradients, LeafKind, Tape, Var};
pub use tensor::Tensor;
