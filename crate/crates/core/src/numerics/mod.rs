//! Dense tensors, a reverse-mode gradient tape, parameters and optimizers.

mod layers;
mod optim;
mod param;
mod tape;
mod tensor;

pub use layers::{glorot, Activation, Linear, Mlp};
pub use optim::{AdamHyper, Method, Optimizer};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::sq_dist;
