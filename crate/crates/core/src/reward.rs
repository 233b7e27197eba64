//! Goal-conditioned rewards for subordinate nodes and per-level returns.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Hierarchy;
use crate::policy::GoalSet;

/// Norm below which a goal or state delta counts as zero.
pub const DEGENERATE_NORM: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),
    #[error("node {0} has no parent")]
    NoParent(usize),
    #[error("expected {expected} worker rewards, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

fn norm(v: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in v {
        s += x * x;
    }
    s.sqrt()
}

/// `1 + cos(goal, delta)`, or the neutral `1` when either vector is (near) zero.
pub fn cosine_score(goal: &[f64], delta: &[f64]) -> Result<f64, RewardError> {
    if goal.len() != delta.len() {
        return Err(RewardError::DimensionMismatch {
            what: "goal vs state delta",
            expected: goal.len(),
            got: delta.len(),
        });
    }
    if !goal.iter().chain(delta).all(|v| v.is_finite()) {
        return Err(RewardError::NonFiniteInput("goal or state delta"));
    }
    let (ng, nd) = (norm(goal), norm(delta));
    if ng < DEGENERATE_NORM || nd < DEGENERATE_NORM {
        return Ok(1.0);
    }
    let mut dot = 0.0;
    for (g, d) in goal.iter().zip(delta) {
        dot += g * d;
    }
    let cos = (dot / (ng * nd)).clamp(-1.0, 1.0);
    Ok(1.0 + cos)
}

/// Reward of a worker that received `goal` and moved from `state` to `next_state`.
pub fn worker_reward(goal: &[f64], state: &[f64], next_state: &[f64]) -> Result<f64, RewardError> {
    if state.len() != next_state.len() {
        return Err(RewardError::DimensionMismatch {
            what: "next state",
            expected: state.len(),
            got: next_state.len(),
        });
    }
    let delta: Vec<f64> = next_state.iter().zip(state).map(|(b, a)| b - a).collect();
    cosine_score(goal, &delta)
}

/// State seen by a hierarchy node: its own for workers, the sum over its
/// descendant workers otherwise.
pub fn node_state(hier: &Hierarchy, states: &[Vec<f64>], node: usize) -> Vec<f64> {
    if hier.level_of(node) == 0 {
        return states[node].clone();
    }
    let dim = states.first().map_or(0, Vec::len);
    let mut acc = vec![0.0; dim];
    for w in hier.descendant_workers(node) {
        for (a, v) in acc.iter_mut().zip(&states[w]) {
            *a += v;
        }
    }
    acc
}

/// Mean over the node's supervisors of the cosine score of their goal against
/// the node's state change.
pub fn supervisor_reward(
    goals: &GoalSet,
    states: &[Vec<f64>],
    next_states: &[Vec<f64>],
    hier: &Hierarchy,
    node: usize,
) -> Result<f64, RewardError> {
    let parents = hier.parents(node);
    if parents.is_empty() {
        return Err(RewardError::NoParent(node));
    }
    let s = node_state(hier, states, node);
    let s_next = node_state(hier, next_states, node);
    let mut total = 0.0;
    for &p in parents {
        let g = goals.get(p, node).ok_or(RewardError::NoParent(node))?;
        total += worker_reward(g, &s, &s_next)?;
    }
    Ok(total / parents.len() as f64)
}

/// Episode returns for every hierarchy level.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardLedger {
    /// Manager return: undiscounted sum of environment rewards.
    pub manager: f64,
    /// Worker return: sum over steps of the mean worker reward.
    pub worker: f64,
    /// Returns of intermediate levels, indexed by `level - 1`.
    pub intermediate: Vec<f64>,
    pub steps: usize,
    /// Worker rewards of the most recent step.
    pub last_worker_rewards: Vec<f64>,
}

impl RewardLedger {
    pub fn new(worker_count: usize) -> Self {
        Self {
            last_worker_rewards: Vec::with_capacity(worker_count),
            ..Self::default()
        }
    }

    pub fn accumulate(
        &mut self,
        env_reward: f64,
        worker_rewards: &[f64],
        expected_workers: usize,
    ) -> Result<(), RewardError> {
        if worker_rewards.len() != expected_workers {
            return Err(RewardError::LengthMismatch {
                expected: expected_workers,
                got: worker_rewards.len(),
            });
        }
        self.manager += env_reward;
        if !worker_rewards.is_empty() {
            let mut sum = 0.0;
            for r in worker_rewards {
                sum += r;
            }
            self.worker += sum / worker_rewards.len() as f64;
        }
        self.last_worker_rewards.clear();
        self.last_worker_rewards.extend_from_slice(worker_rewards);
        self.steps += 1;
        Ok(())
    }

    /// Adds the mean reward of the nodes on an intermediate level.
    pub fn accumulate_level(&mut self, level: usize, rewards: &[f64]) {
        if level == 0 || rewards.is_empty() {
            return;
        }
        if self.intermediate.len() < level {
            self.intermediate.resize(level, 0.0);
        }
        self.intermediate[level - 1] += rewards.iter().sum::<f64>() / rewards.len() as f64;
    }
}
