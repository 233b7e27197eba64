use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::export::file_header;
use super::{derive_seed, io_err, train, ExperimentConfig, HarnessError, TrainOptions};

const SEARCH_STREAM: u64 = 6;
const TRIAL_SEED_STREAM: u64 = 7;

/// Hyperparameters explored by [`random_search`]: the initial step size of
/// both optimizers and the hidden width of every network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub sigma0_min: f64,
    pub sigma0_max: f64,
    pub hidden_widths: Vec<usize>,
}

impl SearchSpace {
    fn validate(&self) -> Result<(), HarnessError> {
        if !(self.sigma0_min > 0.0
            && self.sigma0_max >= self.sigma0_min
            && self.sigma0_max.is_finite())
        {
            return Err(HarnessError::Config(
                "sigma0 range must satisfy 0 < min <= max".into(),
            ));
        }
        if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            return Err(HarnessError::Config(
                "hidden widths must be a non-empty set of positive sizes".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub seed: u64,
    pub sigma0: f64,
    pub hidden_width: usize,
    /// Best manager return of the trial's last generation.
    pub final_best_manager_return: f64,
}

/// Trial `index` of a search: depends only on the search seed, the space and
/// the index.
fn sample(space: &SearchSpace, seed: u64, index: usize) -> (f64, usize, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[SEARCH_STREAM, index as u64]));
    let u: f64 = rng.random();
    let sigma0 = space.sigma0_min + u * (space.sigma0_max - space.sigma0_min);
    let width = space.hidden_widths[rng.random_range(0..space.hidden_widths.len())];
    (
        sigma0,
        width,
        derive_seed(seed, &[TRIAL_SEED_STREAM, index as u64]),
    )
}

fn append_ledger(
    path: &Path,
    search_seed: u64,
    space: &SearchSpace,
    trial: &Trial,
    hash: &str,
) -> Result<(), HarnessError> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| io_err(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str(&format!(
            "# {}\nsearch_seed,trial,trial_seed,sigma0_min,sigma0_max,hidden_widths,sigma0,hidden_width,final_best_manager_return\n",
            file_header(hash)
        ));
    }
    let widths: Vec<String> = space.hidden_widths.iter().map(usize::to_string).collect();
    text.push_str(&format!(
        "{search_seed},{},{},{},{},{},{},{},{}\n",
        trial.index,
        trial.seed,
        space.sigma0_min,
        space.sigma0_max,
        widths.join(";"),
        trial.sigma0,
        trial.hidden_width,
        trial.final_best_manager_return
    ));
    f.write_all(text.as_bytes()).map_err(|e| io_err(path, e))
}

/// Runs `budget` short training runs with sampled hyperparameters and returns
/// them best first. Each finished trial is appended to `ledger` if given;
/// the ledger is never truncated.
pub fn random_search(
    space: &SearchSpace,
    budget: usize,
    base: &ExperimentConfig,
    seed: u64,
    ledger: Option<&Path>,
) -> Result<Vec<Trial>, HarnessError> {
    if budget == 0 {
        return Err(HarnessError::Config(
            "search budget must be at least 1".into(),
        ));
    }
    space.validate()?;
    let mut trials = Vec::with_capacity(budget);
    for index in 0..budget {
        let (sigma0, hidden_width, trial_seed) = sample(space, seed, index);
        let mut cfg = ExperimentConfig {
            sigma0_manager: sigma0,
            sigma0_worker: sigma0,
            seed: trial_seed,
            out_dir: None,
            ..base.clone()
        };
        cfg.policy.hidden_width = hidden_width;
        let ck = train(&cfg, &TrainOptions::default())?;
        let final_best = ck
            .records
            .last()
            .map_or(f64::NEG_INFINITY, |r| r.best_manager_return);
        let trial = Trial {
            index,
            seed: trial_seed,
            sigma0,
            hidden_width,
            final_best_manager_return: final_best,
        };
        log::info!("trial {index}: sigma0 {sigma0:.4}, width {hidden_width}, final best R_M {final_best:.4}");
        if let Some(path) = ledger {
            append_ledger(path, seed, space, &trial, &base.hash())?;
        }
        trials.push(trial);
    }
    trials.sort_by(|a, b| {
        b.final_best_manager_return
            .total_cmp(&a.final_best_manager_return)
            .then(a.index.cmp(&b.index))
    });
    Ok(trials)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::SnakeConfig;

    fn base() -> ExperimentConfig {
        ExperimentConfig {
            env: SnakeConfig {
                max_steps: 10,
                ..SnakeConfig::with_limbs(3)
            },
            generations: 2,
            popsize: 4,
            ..Default::default()
        }
    }

    fn space(max: f64) -> SearchSpace {
        SearchSpace {
            sigma0_min: 0.05,
            sigma0_max: max,
            hidden_widths: vec![4, 8, 16],
        }
    }

    #[test]
    fn single_trial_ranks_first() {
        let trials = random_search(&space(1.0), 1, &base(), 3, None).unwrap();
        assert_eq!(trials.len(), 1);
        assert_eq!(trials[0].index, 0);
    }

    #[test]
    fn sequences_are_reproducible_and_ranked() {
        let a = random_search(&space(1.0), 3, &base(), 11, None).unwrap();
        let b = random_search(&space(1.0), 3, &base(), 11, None).unwrap();
        assert_eq!(a, b);
        assert!(a
            .windows(2)
            .all(|w| w[0].final_best_manager_return >= w[1].final_best_manager_return));
        for t in &a {
            assert!(t.sigma0 >= 0.05 && t.sigma0 <= 1.0);
            assert!([4, 8, 16].contains(&t.hidden_width));
        }
    }

    #[test]
    fn ledger_is_append_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("search.csv");
        random_search(&space(0.5), 2, &base(), 5, Some(&path)).unwrap();
        let first = std::fs::read_to_string(&path).unwrap();
        random_search(&space(2.0), 2, &base(), 5, Some(&path)).unwrap();
        let second = std::fs::read_to_string(&path).unwrap();
        assert!(second.starts_with(&first));
        assert_eq!(second.lines().count(), first.lines().count() + 2);
    }

    #[test]
    fn invalid_search() {
        assert!(random_search(&space(1.0), 0, &base(), 0, None).is_err());
        let bad = SearchSpace {
            sigma0_min: 1.0,
            sigma0_max: 0.5,
            hidden_widths: vec![4],
        };
        assert!(random_search(&bad, 1, &base(), 0, None).is_err());
    }
}
