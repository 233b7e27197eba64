use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, HarnessError};
use crate::env::{self, make_morphology, observe, reset, SnakeConfig, TrajectoryRow};
use crate::graph::Hierarchy;
use crate::policy::{ActionSet, FeudalPolicy, GoalSet, PolicyConfig};
use crate::reward::{supervisor_reward, RewardLedger};

/// Everything needed to roll out a policy: environment, hierarchy and the
/// configured policy architecture.
#[derive(Debug, Clone)]
pub struct Agent {
    env: SnakeConfig,
    hier: Hierarchy,
    policy: FeudalPolicy,
}

impl Agent {
    pub fn new(
        env: SnakeConfig,
        policy: PolicyConfig,
        hier: Hierarchy,
    ) -> Result<Self, HarnessError> {
        env.validate()?;
        if hier.base() != &make_morphology(env.limb_count)? {
            return Err(HarnessError::Config(format!(
                "limb graph must be the {}-link chain driven at links 1..",
                env.limb_count
            )));
        }
        let policy = FeudalPolicy::new(policy, &hier)?;
        Ok(Self { env, hier, policy })
    }

    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        Self::new(cfg.env.clone(), cfg.policy.clone(), cfg.hierarchy()?)
    }

    /// The configured agent on a snake with a different number of links.
    pub fn for_limbs(cfg: &ExperimentConfig, limbs: usize) -> Result<Self, HarnessError> {
        let env = SnakeConfig {
            limb_count: limbs,
            ..cfg.env.clone()
        };
        Self::new(env, cfg.policy.clone(), cfg.hierarchy_for(limbs)?)
    }

    pub fn env(&self) -> &SnakeConfig {
        &self.env
    }

    pub fn hierarchy(&self) -> &Hierarchy {
        &self.hier
    }

    pub fn policy(&self) -> &FeudalPolicy {
        &self.policy
    }

    pub fn manager_dim(&self) -> usize {
        self.policy.manager_dim()
    }

    pub fn worker_dim(&self) -> usize {
        self.policy.worker_dim()
    }
}

/// One control step of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: usize,
    /// Per-limb states observed before acting.
    pub states: Vec<Vec<f64>>,
    pub goals: GoalSet,
    pub actions: ActionSet,
    pub env_reward: f64,
    pub worker_rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    /// `R_M`: sum of environment rewards.
    pub manager_return: f64,
    /// `R_W`: sum over steps of the mean worker reward.
    pub worker_return: f64,
    /// Returns of sub-manager levels, by `level - 1`.
    pub intermediate_returns: Vec<f64>,
    pub steps: usize,
    pub crashed: bool,
    pub trace: Option<Vec<StepTrace>>,
}

/// Rolls out one episode: observe, represent, propagate, emit goals and
/// actions, step the environment, reward every subordinate node against the
/// goals it received, accumulate. A crash ends the episode early with the
/// returns collected so far.
pub fn run_episode(
    agent: &Agent,
    manager: &[f64],
    worker: &[f64],
    seed: u64,
    keep_trace: bool,
) -> Result<EpisodeResult, HarnessError> {
    let hier = &agent.hier;
    let graph = hier.base();
    let feudal = agent.policy.config().variant.is_feudal();
    let workers = hier.worker_count();
    let mut state = reset(&agent.env, seed)?;
    let mut obs = observe(&state, graph)?;
    let mut ledger = RewardLedger::new(workers);
    let mut trace = keep_trace.then(Vec::new);
    let mut crashed = false;
    loop {
        let (actions, goals) = agent.policy.step(hier, &obs, manager, worker)?;
        let out = env::step(&mut state, &actions.actuated_flat(), &agent.env)?;
        if out.crashed {
            crashed = true;
            break;
        }
        let next = observe(&state, graph)?;
        let worker_rewards = if feudal {
            (0..workers)
                .map(|i| supervisor_reward(&goals, obs.states(), next.states(), hier, i))
                .collect::<Result<Vec<_>, _>>()?
        } else {
            Vec::new()
        };
        if feudal {
            for level in 1..hier.top_level() {
                let rewards = hier
                    .nodes_at(level)
                    .map(|n| supervisor_reward(&goals, obs.states(), next.states(), hier, n))
                    .collect::<Result<Vec<_>, _>>()?;
                ledger.accumulate_level(level, &rewards);
            }
        }
        ledger.accumulate(out.reward, &worker_rewards, worker_rewards.len())?;
        if let Some(t) = trace.as_mut() {
            t.push(StepTrace {
                step: state.step - 1,
                states: obs.states().to_vec(),
                goals,
                actions,
                env_reward: out.reward,
                worker_rewards,
            });
        }
        obs = next;
        if out.done {
            break;
        }
    }
    Ok(EpisodeResult {
        manager_return: ledger.manager,
        worker_return: ledger.worker,
        intermediate_returns: ledger.intermediate,
        steps: ledger.steps,
        crashed,
        trace,
    })
}

/// Replays the policy on one seeded episode and records the body state after
/// every step, starting with the reset state.
pub fn policy_trajectory(
    agent: &Agent,
    manager: &[f64],
    worker: &[f64],
    seed: u64,
) -> Result<Vec<TrajectoryRow>, HarnessError> {
    let graph = agent.hier.base();
    let mut state = reset(&agent.env, seed)?;
    let mut rows = vec![TrajectoryRow::capture(&state, 0.0)];
    loop {
        let obs = observe(&state, graph)?;
        let (actions, _) = agent.policy.step(&agent.hier, &obs, manager, worker)?;
        let out = env::step(&mut state, &actions.actuated_flat(), &agent.env)?;
        rows.push(TrajectoryRow::capture(&state, out.reward));
        if out.done {
            return Ok(rows);
        }
    }
}
