use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{io_err, HarnessError};
use crate::env::{make_morphology, SnakeConfig, LIMB_STATE_DIM};
use crate::graph::{Hierarchy, MorphologyFile};
use crate::policy::{PolicyConfig, Variant};

/// How manager and worker candidates are matched within a generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pairing {
    /// Manager candidate `k` plays with worker candidate `k`.
    #[default]
    IndexAligned,
    /// Worker candidates are shuffled with a generation-derived seed.
    RandomSeeded,
}

impl std::str::FromStr for Pairing {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "index-aligned" => Ok(Pairing::IndexAligned),
            "random-seeded" => Ok(Pairing::RandomSeeded),
            other => Err(format!("unknown pairing `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub env: SnakeConfig,
    pub policy: PolicyConfig,
    /// Optional snake morphology with extra pooling levels. Its limb graph
    /// must be the plain chain of `env.limb_count` links.
    pub morphology: Option<MorphologyFile>,
    pub generations: usize,
    /// Population size shared by both optimizers.
    pub popsize: usize,
    pub manager_popsize: Option<usize>,
    pub worker_popsize: Option<usize>,
    pub episodes_per_candidate: usize,
    pub seed: u64,
    pub sigma0_manager: f64,
    pub sigma0_worker: f64,
    pub pairing: Pairing,
    /// Write `checkpoint.json` every this many generations (0: only at the end).
    pub checkpoint_every: usize,
    /// Evaluation threads. Results do not depend on it.
    pub parallel: usize,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: SnakeConfig::default(),
            policy: PolicyConfig::default(),
            morphology: None,
            generations: 300,
            popsize: 16,
            manager_popsize: None,
            worker_popsize: None,
            episodes_per_candidate: 1,
            seed: 0,
            sigma0_manager: 0.5,
            sigma0_worker: 0.5,
            pairing: Pairing::IndexAligned,
            checkpoint_every: 10,
            parallel: 1,
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
            what: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn variant(&self) -> Variant {
        self.policy.variant
    }

    pub fn manager_lambda(&self) -> usize {
        self.manager_popsize.unwrap_or(self.popsize)
    }

    pub fn worker_lambda(&self) -> usize {
        self.worker_popsize.unwrap_or(self.popsize)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.generations == 0 {
            return fail("generations must be at least 1");
        }
        if self.episodes_per_candidate == 0 {
            return fail("episodes per candidate must be at least 1");
        }
        if self.manager_lambda() < 2 || self.worker_lambda() < 2 {
            return fail("population sizes must be at least 2");
        }
        for s in [self.sigma0_manager, self.sigma0_worker] {
            if !(s > 0.0 && s.is_finite()) {
                return fail("sigma0 must be positive and finite");
            }
        }
        if self.parallel == 0 {
            return fail("parallel must be at least 1");
        }
        self.env.validate()?;
        self.policy.validate()?;
        if self.policy.state_dim != LIMB_STATE_DIM
            || self.policy.feature_dim != 1
            || self.policy.action_dim != 1
        {
            return fail(
                "policy must use 5 state entries, 1 feature and 1 action per limb for the snake",
            );
        }
        self.hierarchy()?;
        Ok(())
    }

    /// Hierarchy for the configured limb count (and optional pooling levels).
    pub fn hierarchy(&self) -> Result<Hierarchy, HarnessError> {
        self.hierarchy_for(self.env.limb_count)
    }

    /// Hierarchy for another limb count. Extra pooling levels only apply to
    /// the configured count.
    pub fn hierarchy_for(&self, limbs: usize) -> Result<Hierarchy, HarnessError> {
        let chain = make_morphology(limbs)?;
        match &self.morphology {
            Some(file) if limbs == self.env.limb_count => {
                let graph = file.morph_graph()?;
                if graph != chain {
                    return Err(HarnessError::Config(format!(
                        "morphology must be the {limbs}-link chain"
                    )));
                }
                Ok(Hierarchy::build(graph, &file.cluster_specs())?)
            }
            _ => Ok(Hierarchy::two_level(chain)),
        }
    }

    /// Configuration with every field that cannot change results reset.
    fn canonical(&self) -> Self {
        Self {
            out_dir: None,
            parallel: 1,
            checkpoint_every: 0,
            ..self.clone()
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.canonical()).expect("config serialises");
        let digest = Sha256::digest(&bytes);
        hex::encode(digest)[..16].to_string()
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the stream identified by `path` under `base`. Streams with
/// different paths are unrelated, so evaluation order cannot affect them.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut h = splitmix(base);
    for &p in path {
        h = splitmix(h ^ splitmix(p.wrapping_add(0x5851_F42D_4C95_7F2D)));
    }
    h
}
