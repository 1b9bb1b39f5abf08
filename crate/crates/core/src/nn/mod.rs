//! Dense reverse-mode differentiation and optimization.

pub mod checkpoint;
mod gradcheck;
mod layers;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::{uniform_init, Linear, Mlp};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{cross_entropy_rows, SparseRows, Tape, Var};
pub use tensor::Tensor;

