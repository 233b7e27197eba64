use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::export::file_header;
use super::{
    derive_seed, io_err, run_episode, Agent, ExperimentConfig, HarnessError, Pairing,
    ARTIFACT_VERSION,
};
use crate::cmaes::CmaesState;
use crate::neural::ParamVector;

const MANAGER_STREAM: u64 = 1;
const WORKER_STREAM: u64 = 2;
const EPISODE_STREAM: u64 = 3;
const PAIRING_STREAM: u64 = 4;

/// Ask/tell optimizer over flat parameter vectors; `tell` minimises.
pub trait Optimizer {
    fn dim(&self) -> usize;
    fn ask(&mut self) -> Result<Vec<ParamVector>, HarnessError>;
    fn tell(&mut self, fitness: &[f64]) -> Result<(), HarnessError>;
}

impl Optimizer for CmaesState {
    fn dim(&self) -> usize {
        CmaesState::dim(self)
    }

    fn ask(&mut self) -> Result<Vec<ParamVector>, HarnessError> {
        Ok(CmaesState::ask(self)?.candidates)
    }

    fn tell(&mut self, fitness: &[f64]) -> Result<(), HarnessError> {
        Ok(CmaesState::tell(self, fitness)?)
    }
}

/// Optimizers minimise, so a higher return must become a lower fitness.
pub fn fitness_from_returns(returns: &[f64]) -> Vec<f64> {
    returns.iter().map(|r| -r).collect()
}

/// Summary statistics of one generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub best_manager_return: f64,
    pub mean_manager_return: f64,
    pub std_manager_return: f64,
    pub best_worker_return: f64,
    pub mean_worker_return: f64,
    /// Episodes run so far, this generation included.
    pub evaluations: usize,
    /// Seconds spent on the generation. Kept out of `records.csv` so that
    /// file is reproducible byte for byte.
    #[serde(default)]
    pub wall_time: f64,
}

/// Highest-scoring manager/worker pair seen during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestPair {
    pub generation: usize,
    pub pair: usize,
    pub manager_return: f64,
    pub worker_return: f64,
    pub manager: ParamVector,
    pub worker: ParamVector,
    /// Episode seeds the returns were measured on.
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOutcome {
    pub record: GenerationRecord,
    /// `(manager candidate, worker candidate)` of every evaluated pair.
    pub pairs: Vec<(usize, usize)>,
    pub manager_returns: Vec<f64>,
    pub worker_returns: Vec<f64>,
    pub manager_fitness: Vec<f64>,
    pub worker_fitness: Vec<f64>,
    pub best: BestPair,
}

fn mean(xs: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in xs {
        s += x;
    }
    s / xs.len() as f64
}

fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let mut s = 0.0;
    for x in xs {
        s += (x - m) * (x - m);
    }
    (s / xs.len() as f64).sqrt()
}

fn max(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Mean of `values` over the pairs that used each candidate.
fn per_candidate(values: &[f64], owner: impl Fn(usize) -> usize, count: usize) -> Vec<f64> {
    let mut sums = vec![0.0; count];
    let mut hits = vec![0usize; count];
    for (k, v) in values.iter().enumerate() {
        sums[owner(k)] += v;
        hits[owner(k)] += 1;
    }
    sums.iter().zip(&hits).map(|(s, &h)| s / h as f64).collect()
}

/// One generation: ask both optimizers, evaluate the candidate pairs, tell
/// the manager `-R_M` and the workers `-R_W` (`-R_M` for the flat baseline,
/// which has no manager).
pub fn run_generation(
    agent: &Agent,
    cfg: &ExperimentConfig,
    generation: usize,
    manager_opt: Option<&mut dyn Optimizer>,
    worker_opt: &mut dyn Optimizer,
    pool: Option<&rayon::ThreadPool>,
    evaluations_before: usize,
) -> Result<GenerationOutcome, HarnessError> {
    let mut manager_opt = manager_opt;
    let managers = match manager_opt.as_deref_mut() {
        Some(opt) => opt.ask()?,
        None => vec![ParamVector::default()],
    };
    let workers = worker_opt.ask()?;
    let (lm, lw) = (managers.len(), workers.len());
    let mut order: Vec<usize> = (0..lw).collect();
    if cfg.pairing == Pairing::RandomSeeded {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[PAIRING_STREAM, generation as u64]));
        order.shuffle(&mut rng);
    }
    let count = lm.max(lw);
    let pairs: Vec<(usize, usize)> = (0..count).map(|k| (k % lm, order[k % lw])).collect();
    let episodes = cfg.episodes_per_candidate;
    let seeds_for = |k: usize| -> Vec<u64> {
        (0..episodes)
            .map(|e| {
                derive_seed(
                    cfg.seed,
                    &[EPISODE_STREAM, generation as u64, k as u64, e as u64],
                )
            })
            .collect()
    };
    let evaluate = |k: usize| -> Result<(f64, f64), HarnessError> {
        let (mi, wi) = pairs[k];
        let (mut rm, mut rw) = (0.0, 0.0);
        for seed in seeds_for(k) {
            let r = run_episode(agent, &managers[mi], &workers[wi], seed, false)?;
            rm += r.manager_return;
            rw += r.worker_return;
        }
        Ok((rm / episodes as f64, rw / episodes as f64))
    };
    let results: Vec<Result<(f64, f64), HarnessError>> = match pool {
        Some(pool) => pool.install(|| (0..count).into_par_iter().map(evaluate).collect()),
        None => (0..count).map(evaluate).collect(),
    };
    let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let manager_returns: Vec<f64> = results.iter().map(|r| r.0).collect();
    let worker_returns: Vec<f64> = results.iter().map(|r| r.1).collect();

    let feudal = manager_opt.is_some();
    let manager_fitness =
        fitness_from_returns(&per_candidate(&manager_returns, |k| pairs[k].0, lm));
    let worker_signal = if feudal {
        &worker_returns
    } else {
        &manager_returns
    };
    let worker_fitness = fitness_from_returns(&per_candidate(worker_signal, |k| pairs[k].1, lw));
    if let Some(opt) = manager_opt {
        opt.tell(&manager_fitness)?;
    }
    worker_opt.tell(&worker_fitness)?;

    let mut best_k = 0;
    for k in 1..count {
        if manager_returns[k] > manager_returns[best_k] {
            best_k = k;
        }
    }
    let best = BestPair {
        generation,
        pair: best_k,
        manager_return: manager_returns[best_k],
        worker_return: worker_returns[best_k],
        manager: managers[pairs[best_k].0].clone(),
        worker: workers[pairs[best_k].1].clone(),
        seeds: seeds_for(best_k),
    };
    let record = GenerationRecord {
        generation,
        best_manager_return: max(&manager_returns),
        mean_manager_return: mean(&manager_returns),
        std_manager_return: std_dev(&manager_returns),
        best_worker_return: max(&worker_returns),
        mean_worker_return: mean(&worker_returns),
        evaluations: evaluations_before + count * episodes,
        wall_time: 0.0,
    };
    Ok(GenerationOutcome {
        record,
        pairs,
        manager_returns,
        worker_returns,
        manager_fitness,
        worker_fitness,
        best,
    })
}

/// Complete training state; enough to resume exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub header: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    /// Completed generations.
    pub generation: usize,
    pub manager_es: Option<CmaesState>,
    pub worker_es: CmaesState,
    pub records: Vec<GenerationRecord>,
    pub best: Option<BestPair>,
}

impl Checkpoint {
    /// Parameters used for evaluation: the best pair, or the distribution
    /// means before any generation has run.
    pub fn policy_params(&self) -> (ParamVector, ParamVector) {
        match &self.best {
            Some(b) => (b.manager.clone(), b.worker.clone()),
            None => (
                ParamVector(
                    self.manager_es
                        .as_ref()
                        .map(|e| e.mean().to_vec())
                        .unwrap_or_default(),
                ),
                ParamVector(self.worker_es.mean().to_vec()),
            ),
        }
    }

    pub fn evaluations(&self) -> usize {
        self.records.last().map_or(0, |r| r.evaluations)
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let text = serde_json::to_string_pretty(self).expect("checkpoint serialises");
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, text).map_err(|e| io_err(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
        what: path.display().to_string(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainOptions {
    /// Continue from `out_dir/checkpoint.json` when it exists.
    pub resume: bool,
    /// Stop (after checkpointing) once this many generations are complete.
    pub stop_after: Option<usize>,
}

fn fresh_checkpoint(cfg: &ExperimentConfig, agent: &Agent) -> Result<Checkpoint, HarnessError> {
    let manager_es = if cfg.variant().is_feudal() {
        Some(CmaesState::new(
            agent.manager_dim(),
            cfg.sigma0_manager,
            Some(cfg.manager_lambda()),
            derive_seed(cfg.seed, &[MANAGER_STREAM]),
        )?)
    } else {
        None
    };
    let worker_es = CmaesState::new(
        agent.worker_dim(),
        cfg.sigma0_worker,
        Some(cfg.worker_lambda()),
        derive_seed(cfg.seed, &[WORKER_STREAM]),
    )?;
    let hash = cfg.hash();
    Ok(Checkpoint {
        header: file_header(&hash),
        config_hash: hash,
        config: cfg.clone(),
        generation: 0,
        manager_es,
        worker_es,
        records: Vec::new(),
        best: None,
    })
}

fn write_records(dir: &Path, hash: &str, records: &[GenerationRecord]) -> Result<(), HarnessError> {
    let mut text = format!("# {}\n", file_header(hash));
    text.push_str(
        "generation,best_manager_return,mean_manager_return,std_manager_return,best_worker_return,mean_worker_return,evaluations\n",
    );
    let mut timing = format!("# {}\ngeneration,wall_time_s\n", file_header(hash));
    for r in records {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{}",
            r.generation,
            r.best_manager_return,
            r.mean_manager_return,
            r.std_manager_return,
            r.best_worker_return,
            r.mean_worker_return,
            r.evaluations
        );
        let _ = writeln!(timing, "{},{}", r.generation, r.wall_time);
    }
    let path = dir.join("records.csv");
    std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    let path = dir.join("timing.csv");
    std::fs::write(&path, timing).map_err(|e| io_err(&path, e))
}

/// Trains both optimizers for `cfg.generations` generations. With an output
/// directory, writes `records.csv`, `timing.csv` and `checkpoint.json`.
pub fn train(cfg: &ExperimentConfig, opts: &TrainOptions) -> Result<Checkpoint, HarnessError> {
    cfg.validate()?;
    let agent = Agent::from_config(cfg)?;
    let hash = cfg.hash();
    let out_dir = cfg.out_dir.as_deref();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let ck_path = out_dir.map(|d| d.join("checkpoint.json"));
    let mut ck = match &ck_path {
        Some(p) if opts.resume && p.exists() => {
            let ck = load_checkpoint(p)?;
            if ck.config_hash != hash {
                return Err(HarnessError::ConfigHashMismatch {
                    expected: hash,
                    found: ck.config_hash,
                });
            }
            ck
        }
        _ => fresh_checkpoint(cfg, &agent)?,
    };
    let pool = if cfg.parallel > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.parallel)
                .build()
                .map_err(|e| HarnessError::Config(e.to_string()))?,
        )
    } else {
        None
    };
    log::info!(
        "{ARTIFACT_VERSION}: training {} (config {hash})",
        cfg.variant().name()
    );
    while ck.generation < cfg.generations {
        let started = Instant::now();
        let evaluations = ck.evaluations();
        let generation = ck.generation;
        let Checkpoint {
            manager_es,
            worker_es,
            ..
        } = &mut ck;
        let outcome = run_generation(
            &agent,
            cfg,
            generation,
            manager_es.as_mut().map(|e| e as &mut dyn Optimizer),
            worker_es,
            pool.as_ref(),
            evaluations,
        )?;
        let mut record = outcome.record;
        record.wall_time = started.elapsed().as_secs_f64();
        log::info!(
            "generation {}: best R_M {:.4}, mean R_M {:.4}, mean R_W {:.4}",
            record.generation,
            record.best_manager_return,
            record.mean_manager_return,
            record.mean_worker_return
        );
        if ck
            .best
            .as_ref()
            .is_none_or(|b| outcome.best.manager_return > b.manager_return)
        {
            ck.best = Some(outcome.best);
        }
        ck.records.push(record);
        ck.generation += 1;
        if let Some(dir) = out_dir {
            write_records(dir, &hash, &ck.records)?;
        }
        let stopping = opts.stop_after == Some(ck.generation);
        let periodic = cfg.checkpoint_every > 0 && ck.generation % cfg.checkpoint_every == 0;
        if let Some(p) = &ck_path {
            if periodic || stopping || ck.generation == cfg.generations {
                ck.save(p)?;
            }
        }
        if stopping {
            break;
        }
    }
    if let (Some(p), Some(dir)) = (&ck_path, out_dir) {
        if !p.exists() {
            write_records(dir, &hash, &ck.records)?;
            ck.save(p)?;
        }
    }
    Ok(ck)
}
