//! Simulation, learning and evaluation for a two-agent loader controller.

pub mod agents;
pub mod env;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod nn;
pub mod oracle;
pub mod sac;
pub mod sensors;
pub mod soil;
pub mod vehicle;

pub use error::{Error, Result};
pub use agents::{AgentKind, Variant};
pub use env::{EnvConfig, LoadingEnv, RewardWeights};
pub use harness::{EvalReport, TrainConfig, Trainer};
pub use sac::{Sac, SacConfig};
pub use soil::{Heightfield, PileShape, PileSpec, SoilParams};
pub use vehicle::ActuatorCommand;
