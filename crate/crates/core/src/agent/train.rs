use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::policy::{argmax, QPolicy};
use super::qnet::{Adam, Mlp};
use super::reward::{transition_reward, RewardParams};
use super::{AgentError, StrategySpec};
use crate::stream::{Scene, VideoStream};

/// Q-learning hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub episodes: usize,
    pub learning_rate: f64,
    pub discount: f64,
    /// Exploration rate at the first episode, decayed linearly to `epsilon_end`.
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Environment steps collected before the first update.
    pub warmup: usize,
    /// Environment steps between updates.
    pub train_every: usize,
    /// Updates between target-network refreshes.
    pub target_sync: usize,
    pub reward: RewardParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 120,
            learning_rate: 1e-3,
            discount: 0.8,
            epsilon_start: 1.0,
            epsilon_end: 0.1,
            hidden: vec![32, 32],
            batch_size: 32,
            replay_capacity: 20_000,
            warmup: 500,
            train_every: 2,
            target_sync: 250,
            reward: RewardParams::default(),
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), AgentError> {
        let bad = |msg: &str| Err(AgentError::InvalidTraining(msg.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.discount) {
            return bad("discount must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("exploration rates must lie in [0, 1]");
        }
        if self.batch_size == 0 || self.replay_capacity == 0 || self.train_every == 0 || self.target_sync == 0 {
            return bad("batch_size, replay_capacity, train_every and target_sync must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layers must be nonempty");
        }
        Ok(())
    }

    fn epsilon(&self, episode: usize) -> f64 {
        if self.episodes <= 1 {
            return self.epsilon_start;
        }
        let frac = episode as f64 / (self.episodes - 1) as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// Per-episode training statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    /// Position of the episode's stream in the training set.
    pub stream: usize,
    pub start: usize,
    pub steps: usize,
    pub total_reward: f64,
    pub epsilon: f64,
    /// Jump lengths taken, in order.
    pub actions: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: QPolicy,
    pub log: Vec<EpisodeLog>,
}

/// Every view of every scene, in order.
pub fn training_streams(scenes: &[Scene]) -> Vec<&VideoStream> {
    scenes.iter().flat_map(|s| s.streams()).collect()
}

#[derive(Debug, Clone, Copy)]
struct Transition {
    stream: usize,
    position: usize,
    action: usize,
    reward: f64,
    next: Option<usize>,
}

struct Replay {
    items: Vec<Transition>,
    capacity: usize,
    head: usize,
}

impl Replay {
    fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }
}

/// Episodic Q-learning over the skip MDP of each training stream.
///
/// An episode walks one stream from a random start within the first `A`
/// frames until a jump leaves the stream. Exploration is epsilon-greedy;
/// updates use uniform replay, a Huber loss and a periodically refreshed
/// target network. Deterministic in `seed`.
pub fn train_q(
    streams: &[&VideoStream],
    strategy: StrategySpec,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome, AgentError> {
    config.validate()?;
    if streams.is_empty() {
        return Err(AgentError::InvalidTraining("no training streams".into()));
    }
    let dim = streams[0].dim();
    if streams.iter().any(|s| s.dim() != dim || s.is_empty()) {
        return Err(AgentError::InvalidTraining(
            "training streams must be nonempty and share one feature dimension".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sizes = vec![dim];
    sizes.extend(&config.hidden);
    sizes.push(strategy.action_space);
    let mut online = Mlp::new(&sizes, &mut rng);
    let mut target = online.clone();
    let mut adam = Adam::new(online.params().len(), config.learning_rate);
    let mut grads = vec![0.0; online.params().len()];

    let features: Vec<Vec<Vec<f64>>> = streams
        .iter()
        .map(|s| {
            s.frames()
                .iter()
                .map(|f| f.feature.iter().map(|&x| f64::from(x)).collect())
                .collect()
        })
        .collect();
    let labels: Vec<Vec<bool>> = streams.iter().map(|s| s.labels()).collect();

    let mut replay = Replay {
        items: Vec::with_capacity(config.replay_capacity.min(1 << 16)),
        capacity: config.replay_capacity,
        head: 0,
    };
    let mut log = Vec::with_capacity(config.episodes);
    let mut env_steps = 0usize;
    let mut updates = 0usize;
    let batch = config.batch_size;

    for episode in 0..config.episodes {
        let epsilon = config.epsilon(episode);
        let stream = rng.random_range(0..streams.len());
        let len = labels[stream].len();
        let start = rng.random_range(0..strategy.action_space.min(len));
        let mut position = start;
        let mut total_reward = 0.0;
        let mut steps = 0;
        let mut actions = Vec::new();
        loop {
            let action = if rng.random::<f64>() < epsilon {
                rng.random_range(1..=strategy.action_space)
            } else {
                let q = online.forward(&features[stream][position]);
                if q.iter().any(|v| !v.is_finite()) {
                    return Err(AgentError::Diverged { episode, step: steps });
                }
                argmax(&q) + 1
            };
            let reward = transition_reward(&labels[stream], position, action, &strategy, &config.reward)?;
            let next = Some(position + action).filter(|&n| n < len);
            replay.push(Transition {
                stream,
                position,
                action,
                reward,
                next,
            });
            total_reward += reward;
            actions.push(action);
            steps += 1;
            env_steps += 1;

            if env_steps >= config.warmup && env_steps.is_multiple_of(config.train_every) && replay.items.len() >= batch
            {
                grads.iter_mut().for_each(|g| *g = 0.0);
                for _ in 0..batch {
                    let t = replay.items[rng.random_range(0..replay.items.len())];
                    let bootstrap = match t.next {
                        Some(n) => target
                            .forward(&features[t.stream][n])
                            .into_iter()
                            .fold(f64::NEG_INFINITY, f64::max),
                        None => 0.0,
                    };
                    let y = t.reward + config.discount * bootstrap;
                    let mut finite = y.is_finite();
                    online.backprop_with(
                        &features[t.stream][t.position],
                        |q| {
                            let mut g = vec![0.0; q.len()];
                            let err = q[t.action - 1] - y;
                            finite &= err.is_finite();
                            g[t.action - 1] = err.clamp(-1.0, 1.0) / batch as f64;
                            g
                        },
                        &mut grads,
                    );
                    if !finite {
                        return Err(AgentError::Diverged { episode, step: steps });
                    }
                }
                adam.apply(online.params_mut(), &grads);
                updates += 1;
                if updates.is_multiple_of(config.target_sync) {
                    target = online.clone();
                }
            }

            match next {
                Some(n) => position = n,
                None => break,
            }
        }
        log.push(EpisodeLog {
            episode,
            stream,
            start,
            steps,
            total_reward,
            epsilon,
            actions,
        });
    }

    if online.params().iter().any(|p| !p.is_finite()) {
        return Err(AgentError::Diverged {
            episode: config.episodes,
            step: 0,
        });
    }
    Ok(TrainOutcome {
        policy: QPolicy::new(strategy, online),
        log,
    })
}
