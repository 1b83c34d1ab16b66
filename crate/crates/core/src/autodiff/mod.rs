//! Minimal tensor engine: dense tensors, a recording graph with
//! reverse-mode differentiation, the layers the encoder and heads need,
//! and Adam.

mod graph;
mod kernels;
mod layers;
mod optim;
mod real;
mod tensor;

pub use graph::{ensure_finite, sigmoid, softmax_in_place, Activation, BatchStats, Gradients, Graph, PROB_CLAMP};
pub use kernels::ConvDims;
pub(crate) use layers::join;
pub use layers::{BatchNorm1d, Conv1d, Linear, Parameters, BN_EPS, BN_MOMENTUM, LEAKY_SLOPE};
pub use optim::{Adam, AdamConfig};
pub use real::{r, Real};
pub use tensor::{NodeId, Tensor};
