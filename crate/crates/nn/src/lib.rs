//! CPU neural-network engine with hand-written backward passes, and the
//! CNN + GRU heart-rate regressor built on it.

pub mod checkpoint;
pub mod gradcheck;
pub mod gru;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

pub use tensor::{NnError, ParamId, Params, Scalar, Tensor};
