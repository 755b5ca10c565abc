//! Deep Q-learning: exploration schedule, TD loss, replay, training and
//! evaluation.

mod agent;
mod replay;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use agent::{batch_input, AgentObs, ObsEncoder};
pub use replay::{ReplayBuffer, Transition};
pub use train::{
    eval_episode_seed, evaluate, evaluate_checkpoint, evaluate_policy, random_policy_metrics, train, EvalMetrics, MetricsRow, TrainOutcome,
    Trainer,
};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub batch_size: usize,
    /// Hard target copy every this many environment steps.
    pub target_update: u64,
    pub lr: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay_steps: u64,
    pub total_steps: u64,
    pub eval_episodes: usize,
    pub checkpoint_every: u64,
    pub replay_capacity: usize,
    /// Stored transitions required before the first update.
    pub warmup: usize,
    pub bn_momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.99,
            batch_size: 64,
            target_update: 100,
            lr: 1e-4,
            eps_start: 1.0,
            eps_end: 0.1,
            eps_decay_steps: 70_000,
            total_steps: 10_000,
            eval_episodes: 20,
            checkpoint_every: 5_000,
            replay_capacity: 50_000,
            warmup: 1_000,
            bn_momentum: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        for (name, e) in [("eps_start", self.eps_start), ("eps_end", self.eps_end)] {
            if !(0.0..=1.0).contains(&e) {
                return bad(format!("{name} must lie in [0, 1], got {e}"));
            }
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return bad(format!(
                "need 0 < batch_size <= replay_capacity, got {} and {}",
                self.batch_size, self.replay_capacity
            ));
        }
        if self.target_update == 0 || self.checkpoint_every == 0 {
            return bad("target_update and checkpoint_every must be positive".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad(format!("bn_momentum must lie in [0, 1], got {}", self.bn_momentum));
        }
        Ok(())
    }

    /// Piecewise-linear exploration rate after `step` environment steps.
    pub fn epsilon(&self, step: u64) -> f64 {
        if step >= self.eps_decay_steps {
            return self.eps_end;
        }
        let frac = step as f64 / self.eps_decay_steps as f64;
        self.eps_start + (self.eps_end - self.eps_start) * frac
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(q: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy choice among `n` actions; `q` is only evaluated when the
/// greedy branch is taken.
pub fn epsilon_greedy<R: Rng>(n: usize, eps: f64, rng: &mut R, q: impl FnOnce() -> Result<Vec<f32>>) -> Result<usize> {
    if rng.random::<f64>() < eps {
        Ok(rng.random_range(0..n))
    } else {
        Ok(argmax(&q()?))
    }
}

pub fn select_action<R: Rng>(q: &[f32], eps: f64, rng: &mut R) -> usize {
    epsilon_greedy(q.len(), eps, rng, || Ok(q.to_vec())).expect("infallible")
}

/// `r + gamma * max_a' Q(s', a')`, without the bootstrap on terminal steps.
pub fn td_targets(rewards: &[f32], dones: &[bool], next_max: &[f32], gamma: f64) -> Vec<f32> {
    rewards
        .iter()
        .zip(dones)
        .zip(next_max)
        .map(|((&r, &d), &m)| if d { r } else { (r as f64 + gamma * m as f64) as f32 })
        .collect()
}

/// Mean squared difference between `Q(s, a)` picked from `q` `[B, A]` and
/// fixed targets.
pub fn td_loss_from_q(tape: &mut Tape, q: Var, actions: &[usize], targets: &[f32]) -> Result<Var> {
    if actions.is_empty() {
        return Err(Error::Usage("td loss over an empty batch".into()));
    }
    if actions.len() != targets.len() {
        return Err(Error::dim("td_loss", format!("{} actions, {} targets", actions.len(), targets.len())));
    }
    let qa = tape.gather_rows(q, actions)?;
    let y = tape.leaf(crate::tensor::Tensor::new([targets.len()], targets.to_vec())?)?;
    let r = tape.sub(qa, y)?;
    let sq = tape.mul(r, r)?;
    tape.mean(sq)
}

/// A derived seed: splitmix64 of `base` and `stream`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
