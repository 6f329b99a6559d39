//! Per-view fast-forwarding agents.
//!
//! Each view runs a skip policy: from the current frame it picks how far to
//! jump ahead (`1..=A`), processing only the frames it lands on. Three
//! strategies differ in their maximum jump `A` and in how the per-step reward
//! is scaled by the jump size. Policies are learned with Q-learning over the
//! stream MDP (state = current frame feature, action = jump length).

mod forward;
mod policy;
mod qnet;
mod reward;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use forward::{fast_forward_period, FixedSkip, RandomSkip, SelectedFrame, SelectionBuffer, SkipPolicy};
pub use policy::{CheckpointError, QPolicy};
pub use qnet::Mlp;
pub use reward::{hit_reward, pace_modifier, reward, skip_penalty, transition_reward, RewardParams};
pub use train::{train_q, training_streams, EpisodeLog, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("action {action} is outside 1..={max}")]
    ActionOutOfRange { action: usize, max: usize },
    #[error("{skipped} skipped frames cannot come from a jump of {action}")]
    SkipLength { skipped: usize, action: usize },
    #[error("landing index {landing} is outside a stream of {len} frames")]
    LandingOutOfRange { landing: usize, len: usize },
    #[error("unknown strategy kind {0:?} (expected slow, normal or fast)")]
    UnknownStrategy(String),
    #[error("action space must be at least 1")]
    EmptyActionSpace,
    #[error("invalid training setup: {0}")]
    InvalidTraining(String),
    #[error("Q-learning diverged at episode {episode}, step {step}: non-finite value estimate")]
    Diverged { episode: usize, step: usize },
}

/// Fast-forwarding pace. Ordered by pace: `Fast < Normal < Slow` compares
/// how many frames a strategy tends to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Fast,
    Normal,
    Slow,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [StrategyKind::Fast, StrategyKind::Normal, StrategyKind::Slow];

    pub fn default_action_space(self) -> usize {
        match self {
            StrategyKind::Slow => 15,
            StrategyKind::Normal => 25,
            StrategyKind::Fast => 35,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Slow => "slow",
            StrategyKind::Normal => "normal",
            StrategyKind::Fast => "fast",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            StrategyKind::Fast => 0,
            StrategyKind::Normal => 1,
            StrategyKind::Slow => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(StrategyKind::Fast),
            1 => Some(StrategyKind::Normal),
            2 => Some(StrategyKind::Slow),
            _ => None,
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = AgentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "slow" => Ok(StrategyKind::Slow),
            "normal" => Ok(StrategyKind::Normal),
            "fast" => Ok(StrategyKind::Fast),
            _ => Err(AgentError::UnknownStrategy(s.to_string())),
        }
    }
}

/// A strategy together with its action space (maximum jump).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    pub action_space: usize,
}

impl StrategySpec {
    pub fn new(kind: StrategyKind, action_space: usize) -> Result<Self, AgentError> {
        if action_space == 0 {
            return Err(AgentError::EmptyActionSpace);
        }
        Ok(Self { kind, action_space })
    }

    pub fn default_for(kind: StrategyKind) -> Self {
        Self {
            kind,
            action_space: kind.default_action_space(),
        }
    }
}
