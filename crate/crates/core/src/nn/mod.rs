//! Small CPU neural-network toolkit with hand-written backward passes.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod network;
pub mod policy;
mod real;
mod tensor;

pub use adam::Adam;
pub use layers::{Activation, ConvGeometry, Conv2d, Dense, Layer};
pub use network::{ConvSpec, NetInput, NetSpec, Sequential, TwoBranchNet, VisualSpec};
pub use real::Real;
pub use tensor::Tensor;
