//! Observation extraction, piecewise-constant advice, the policy registry
//! and a derivative-free trainer.

mod advice;
mod cem;
mod file;
mod observation;
mod policy;
mod registry;

pub use advice::{
    accel_to_speed_advice, advise, episode_reward, in_range, ActionBounds, ActionMode, Advice, AdviceSettings,
};
pub use cem::{elite_mean, train_cem, CemParams, CemResult, IterationStats, TrainingEnv};
pub use file::{Normalization, PolicyFile};
pub use observation::{observe, Observation};
pub use policy::{
    ConstantSpeed, EquilibriumHeuristic, LinearPolicy, MlpPolicy, Policy, PolicyContext, PolicyInput, PolicyKind,
};
pub use registry::{PolicyFactory, PolicyRegistry};

use thiserror::Error;

use crate::ring::RingError;

#[derive(Debug, Error)]
pub enum AdvisoryError {
    #[error("no advice has been issued yet and tick {tick} is not a multiple of the hold length {delta}")]
    MissingPriorAdvice { tick: u64, delta: u64 },
    #[error("hold length must be at least 1 step")]
    InvalidDelta,
    #[error("range half-width must be finite and non-negative, got {0}")]
    InvalidRange(f64),
    #[error("expected {expected} advice, got {actual}")]
    WrongMode { expected: ActionMode, actual: ActionMode },
    #[error("policy shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("reward window is empty: trace has {len} ticks, warmup is {warmup}")]
    EmptyRewardWindow { len: usize, warmup: u64 },
    #[error("unknown policy kind {0:?}")]
    UnknownPolicy(String),
    #[error("invalid trainer parameters: {0}")]
    InvalidTrainer(String),
    #[error("policy file: {0}")]
    File(String),
    #[error(transparent)]
    Ring(#[from] RingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
