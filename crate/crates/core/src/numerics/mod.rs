//! Dense arrays, tape-based reverse-mode differentiation, layers and optimizers.

mod array;
pub mod gradcheck;
pub mod layers;
pub mod optim;
mod param;
mod tape;

pub use array::{matmul, NdArray};
pub use gradcheck::grad_check;
pub use optim::{Adam, StepDecay};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{conv1d_out_len, softmax_into, softmax_xent, Grads, Tape, Var, LAYER_NORM_EPS};
