//! Desk-scale reinforcement learning for quantization-aware policies: built-in
//! environments, a replay buffer, DDPG and SAC with FP32 critics, and
//! deterministic evaluation.

pub mod config;
pub mod critic;
pub mod env;
pub mod eval;
pub mod replay;
pub mod sac;
pub mod seeds;
pub mod train;

pub use config::{Algorithm, EntropyMode, TrainConfig};
pub use env::{EnvKind, EnvState, Environment, Pendulum, PointMass, Transition};
pub use eval::{evaluate, evaluate_noisy, Actor, EvalReport};
pub use replay::ReplayBuffer;
pub use train::{init_policy, train, CurvePoint, TrainOutput, TrainStats};

#[derive(Debug, thiserror::Error)]
pub enum RlError {
    #[error(transparent)]
    Core(#[from] qpolicy_core::Error),
    #[error("non-finite {what} at step {step}; a quantizer scale may have collapsed")]
    NonFinite { what: &'static str, step: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}
