use serde::{Deserialize, Serialize};

use super::{AgentError, StrategyKind, StrategySpec};

/// Shaping parameters shared by all strategies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    /// Hit window `w` in frames.
    pub window: usize,
    /// Weight of skipped unimportant frames in the skip penalty.
    pub beta: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self { window: 4, beta: 0.1 }
    }
}

/// Skip penalty of a jump of `action` frames that passed over `skipped`:
/// `(#important - beta * #unimportant) / action`, in `[-beta, 1]`.
///
/// `skipped` may be shorter than `action` (the landing frame is processed,
/// not skipped, and a jump can run off the end of the stream).
pub fn skip_penalty(skipped: &[bool], action: usize, beta: f64) -> Result<f64, AgentError> {
    if action == 0 {
        return Err(AgentError::ActionOutOfRange {
            action,
            max: usize::MAX,
        });
    }
    if skipped.len() > action {
        return Err(AgentError::SkipLength {
            skipped: skipped.len(),
            action,
        });
    }
    let important = skipped.iter().filter(|&&l| l).count() as f64;
    let unimportant = skipped.len() as f64 - important;
    Ok((important - beta * unimportant) / action as f64)
}

/// Hit reward for landing at `landing`: `exp(-d / w)` where `d` is the
/// distance to the nearest important frame, or 0 when `d > w`.
pub fn hit_reward(landing: usize, truth: &[bool], window: usize) -> Result<f64, AgentError> {
    if landing >= truth.len() {
        return Err(AgentError::LandingOutOfRange {
            landing,
            len: truth.len(),
        });
    }
    let lo = landing.saturating_sub(window);
    let hi = (landing + window).min(truth.len() - 1);
    let nearest = (lo..=hi).filter(|&t| truth[t]).map(|t| t.abs_diff(landing)).min();
    Ok(match nearest {
        Some(0) => 1.0,
        Some(d) => (-(d as f64) / window as f64).exp(),
        None => 0.0,
    })
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Multiplicative reward factor of a strategy for a jump of `action`
/// frames. The sigmoid is applied to the raw action count.
pub fn pace_modifier(kind: StrategyKind, action: usize) -> f64 {
    match kind {
        StrategyKind::Normal => 1.0,
        StrategyKind::Slow => 1.0 - sigmoid(action as f64) / 2.0,
        StrategyKind::Fast => 1.0 + sigmoid(action as f64) / 2.0,
    }
}

/// Immediate reward `(-SP + HR) * modifier(strategy, a)`.
pub fn reward(strategy: &StrategySpec, skip_penalty: f64, hit_reward: f64, action: usize) -> Result<f64, AgentError> {
    if action == 0 || action > strategy.action_space {
        return Err(AgentError::ActionOutOfRange {
            action,
            max: strategy.action_space,
        });
    }
    Ok((hit_reward - skip_penalty) * pace_modifier(strategy.kind, action))
}

/// Reward of jumping `action` frames from `position` on a stream labelled
/// `labels`. The frames strictly between `position` and the landing frame
/// are the skipped ones; landing past the end earns no hit reward.
pub fn transition_reward(
    labels: &[bool],
    position: usize,
    action: usize,
    strategy: &StrategySpec,
    params: &RewardParams,
) -> Result<f64, AgentError> {
    let landing = position + action;
    let from = (position + 1).min(labels.len());
    let to = landing.min(labels.len());
    let sp = skip_penalty(&labels[from..to], action, params.beta)?;
    let hr = if landing < labels.len() {
        hit_reward(landing, labels, params.window)?
    } else {
        0.0
    };
    reward(strategy, sp, hr, action)
}
