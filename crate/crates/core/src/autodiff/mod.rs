//! Reverse-mode differentiable numerical core: tensors, the computation
//! record, parameter storage, the Adam optimizer, checkpoints and a
//! finite-difference gradient checker.

mod checkpoint;
pub mod gradcheck;
mod graph;
mod optim;
mod params;
mod real;
mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointEntry};
pub use graph::{Gradients, Graph, Var, LAYER_NORM_EPS, SMOOTH_L1_BETA};
pub use optim::Adam;
pub use params::{ParamGroup, ParamId, Parameter, ParameterStore};
pub use real::Real;
pub use tensor::Tensor;
