//! Dense arrays, reverse-mode differentiation, MLPs, positional encoding and
//! the optimizer.

mod adam;
mod array;
pub mod encoding;
mod mlp;
mod params;
mod real;
mod schedule;
mod tape;

pub use adam::{AdamState, BETA1, BETA2, EPSILON};
pub use array::DenseArray;
pub use encoding::{encoded_dim, positional_encode};
pub use mlp::{Activation, Mlp, MlpSpec};
pub use params::{Gradients, ParamBlock, ParamId, ParamStore, ParamVars};
pub use real::{gemm, Real};
pub use schedule::DecaySchedule;
pub use tape::{NodeGradients, Tape, Unary, Var};
