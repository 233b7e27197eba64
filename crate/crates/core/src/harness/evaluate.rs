use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::export::file_header;
use super::{derive_seed, io_err, run_episode, Agent, Checkpoint, ExperimentConfig, HarnessError};

/// Base of the fixed evaluation seeds; episode `i` uses `derive_seed(EVAL_SEED, [i])`.
pub const EVAL_SEED: u64 = 0x005E_ED0F_E7A1;
const RANDOM_POLICY_STREAM: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub limbs: usize,
    pub seeds: Vec<u64>,
    pub manager_returns: Vec<f64>,
    pub worker_returns: Vec<f64>,
    pub mean_manager_return: f64,
    pub std_manager_return: f64,
    /// Standard error of the mean manager return.
    pub stderr_manager_return: f64,
    pub mean_worker_return: f64,
}

impl EvalReport {
    fn new(limbs: usize, seeds: Vec<u64>, results: Vec<(f64, f64)>) -> Self {
        let n = results.len() as f64;
        let manager_returns: Vec<f64> = results.iter().map(|r| r.0).collect();
        let worker_returns: Vec<f64> = results.iter().map(|r| r.1).collect();
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / n;
        let m = mean(&manager_returns);
        let var = if results.len() > 1 {
            manager_returns
                .iter()
                .map(|r| (r - m) * (r - m))
                .sum::<f64>()
                / (n - 1.0)
        } else {
            0.0
        };
        Self {
            limbs,
            seeds,
            mean_manager_return: m,
            std_manager_return: var.sqrt(),
            stderr_manager_return: (var / n).sqrt(),
            mean_worker_return: mean(&worker_returns),
            manager_returns,
            worker_returns,
        }
    }

    pub fn episodes(&self) -> usize {
        self.manager_returns.len()
    }
}

pub(crate) fn eval_seeds(episodes: usize) -> Vec<u64> {
    (0..episodes as u64)
        .map(|i| derive_seed(EVAL_SEED, &[i]))
        .collect()
}

pub(crate) fn map_episodes<F>(
    parallel: usize,
    count: usize,
    f: F,
) -> Result<Vec<(f64, f64)>, HarnessError>
where
    F: Fn(usize) -> Result<(f64, f64), HarnessError> + Sync + Send,
{
    let results: Vec<_> = if parallel > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallel)
            .build()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        pool.install(|| (0..count).into_par_iter().map(&f).collect())
    } else {
        (0..count).map(&f).collect()
    };
    results.into_iter().collect()
}

/// Evaluates the checkpoint's policy on a snake with `limbs` links (its
/// training morphology when `None`) over `episodes` fixed seeds.
pub fn evaluate(
    ck: &Checkpoint,
    limbs: Option<usize>,
    episodes: usize,
    parallel: usize,
) -> Result<EvalReport, HarnessError> {
    let limbs = limbs.unwrap_or(ck.config.env.limb_count);
    let agent = Agent::for_limbs(&ck.config, limbs)?;
    let (manager, worker) = ck.policy_params();
    if manager.len() != agent.manager_dim() || worker.len() != agent.worker_dim() {
        return Err(HarnessError::IncompatibleCheckpoint(format!(
            "parameters ({}, {}) do not fit a {limbs}-limb agent ({}, {})",
            manager.len(),
            worker.len(),
            agent.manager_dim(),
            agent.worker_dim()
        )));
    }
    let seeds = eval_seeds(episodes);
    let results = map_episodes(parallel, episodes, |i| {
        let r = run_episode(&agent, &manager, &worker, seeds[i], false)?;
        Ok((r.manager_return, r.worker_return))
    })?;
    Ok(EvalReport::new(limbs, seeds, results))
}

/// Baseline: every episode draws fresh parameters from the optimizers'
/// initial distributions `N(0, sigma0^2 I)`.
pub fn evaluate_random(
    cfg: &ExperimentConfig,
    episodes: usize,
    seed: u64,
    parallel: usize,
) -> Result<EvalReport, HarnessError> {
    cfg.validate()?;
    let agent = Agent::from_config(cfg)?;
    let seeds = eval_seeds(episodes);
    let has_manager = cfg.variant().is_feudal();
    let results = map_episodes(parallel, episodes, |i| {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, &[RANDOM_POLICY_STREAM, i as u64]));
        let m_dist = Normal::new(0.0, cfg.sigma0_manager).expect("validated sigma");
        let w_dist = Normal::new(0.0, cfg.sigma0_worker).expect("validated sigma");
        let manager: Vec<f64> = if has_manager {
            (0..agent.manager_dim())
                .map(|_| m_dist.sample(&mut rng))
                .collect()
        } else {
            Vec::new()
        };
        let worker: Vec<f64> = (0..agent.worker_dim())
            .map(|_| w_dist.sample(&mut rng))
            .collect();
        let r = run_episode(&agent, &manager, &worker, seeds[i], false)?;
        Ok((r.manager_return, r.worker_return))
    })?;
    Ok(EvalReport::new(cfg.env.limb_count, seeds, results))
}

/// Re-runs the best training pair on the seeds it was scored with; returns
/// `(R_M, R_W)` averaged exactly as during training.
pub fn replay_best(ck: &Checkpoint) -> Result<Option<(f64, f64)>, HarnessError> {
    let Some(best) = &ck.best else {
        return Ok(None);
    };
    let agent = Agent::from_config(&ck.config)?;
    let (mut rm, mut rw) = (0.0, 0.0);
    for &seed in &best.seeds {
        let r = run_episode(&agent, &best.manager, &best.worker, seed, false)?;
        rm += r.manager_return;
        rw += r.worker_return;
    }
    let n = best.seeds.len() as f64;
    Ok(Some((rm / n, rw / n)))
}

/// Per-episode CSV preceded by the provenance header line.
pub fn write_eval_csv(
    path: &Path,
    report: &EvalReport,
    config_hash: &str,
) -> Result<(), HarnessError> {
    let mut text = format!(
        "# {}\nepisode,seed,limbs,manager_return,worker_return\n",
        file_header(config_hash)
    );
    for (i, seed) in report.seeds.iter().enumerate() {
        let _ = writeln!(
            text,
            "{i},{seed},{},{},{}",
            report.limbs, report.manager_returns[i], report.worker_returns[i]
        );
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}
