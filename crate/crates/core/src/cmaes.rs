//! Covariance matrix adaptation evolution strategy with an ask/tell interface.
//!
//! Standard (mu/mu_w, lambda)-CMA-ES with positive recombination weights,
//! cumulative step-size adaptation and rank-one plus rank-mu covariance
//! updates. Strategy parameters use the usual defaults:
//!
//! ```text
//! lambda  = 4 + floor(3 ln n)          mu      = floor(lambda / 2)
//! w_i    ∝ ln((lambda + 1) / 2) - ln i  mu_eff  = 1 / sum w_i^2
//! c_sigma = (mu_eff + 2) / (n + mu_eff + 5)
//! d_sigma = 1 + 2 max(0, sqrt((mu_eff - 1) / (n + 1)) - 1) + c_sigma
//! c_c     = (4 + mu_eff / n) / (n + 4 + 2 mu_eff / n)
//! c_1     = 2 / ((n + 1.3)^2 + mu_eff)
//! c_mu    = min(1 - c_1, 2 (mu_eff - 2 + 1 / mu_eff) / ((n + 2)^2 + mu_eff))
//! ```
//!
//! `tell` minimises. The whole state, RNG position included, serialises to
//! JSON so a run can be resumed bit-exactly.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::neural::ParamVector;

/// Smallest eigenvalue tolerated in the covariance matrix.
pub const EIGEN_FLOOR: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CmaesError {
    #[error("dimension must be at least 1")]
    InvalidDimension,
    #[error("initial step size must be positive and finite, got {0}")]
    InvalidSigma(f64),
    #[error("population size must be at least 2, got {0}")]
    InvalidPopulation(usize),
    #[error("initial mean has length {got}, expected {expected}")]
    InvalidMean { expected: usize, got: usize },
    #[error("ask called while a population is still awaiting tell")]
    AskBeforeTell,
    #[error("tell called without an outstanding population")]
    TellWithoutAsk,
    #[error("expected {expected} fitness values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("fitness {value} at index {index} is not finite")]
    NonFiniteFitness { index: usize, value: f64 },
}

/// ChaCha8 stream identified by its `u64` seed and current word position.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    rng: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

impl PartialEq for SeededRng {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed && self.word_pos() == other.word_pos()
    }
}

#[derive(Serialize, Deserialize)]
struct RngRecord {
    seed: u64,
    // decimal string: u128 does not survive every JSON reader
    word_pos: String,
}

impl Serialize for SeededRng {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RngRecord {
            seed: self.seed,
            word_pos: self.word_pos().to_string(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SeededRng {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rec = RngRecord::deserialize(d)?;
        let pos: u128 = rec.word_pos.parse().map_err(serde::de::Error::custom)?;
        let mut rng = ChaCha8Rng::seed_from_u64(rec.seed);
        rng.set_word_pos(pos);
        Ok(Self {
            seed: rec.seed,
            rng,
        })
    }
}

/// Candidate solutions of one generation.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub generation: usize,
    pub candidates: Vec<ParamVector>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Pending {
    generation: usize,
    /// `(x_k - m) / sigma` for each candidate.
    steps: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyParams {
    pub lambda: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    /// E||N(0, I)||
    pub chi_n: f64,
    /// Generations between eigendecompositions.
    pub eigen_interval: usize,
}

pub fn default_population_size(dim: usize) -> usize {
    4 + (3.0 * (dim as f64).ln()).floor() as usize
}

impl StrategyParams {
    pub fn new(dim: usize, lambda: usize) -> Self {
        let n = dim as f64;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        let c_1 = 2.0 / ((n + 1.3).powi(2) + mu_eff);
        let c_mu =
            (2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0).powi(2) + mu_eff)).min(1.0 - c_1);
        let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
        let eigen_interval = dim.div_ceil(10 * lambda).max(1);
        Self {
            lambda,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
            eigen_interval,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmaesState {
    dim: usize,
    params: StrategyParams,
    mean: Vec<f64>,
    sigma: f64,
    /// Row-major `n x n`.
    covariance: Vec<f64>,
    path_sigma: Vec<f64>,
    path_c: Vec<f64>,
    /// Row-major eigenvector matrix `B` (eigenvectors in columns).
    eigen_basis: Vec<f64>,
    /// Square roots of the eigenvalues, `D`.
    eigen_scales: Vec<f64>,
    eigen_generation: usize,
    generation: usize,
    evaluations: usize,
    rng: SeededRng,
    pending: Option<Pending>,
    best: Option<(f64, Vec<f64>)>,
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

impl CmaesState {
    /// Zero mean, identity covariance.
    pub fn new(
        dim: usize,
        sigma0: f64,
        lambda: Option<usize>,
        seed: u64,
    ) -> Result<Self, CmaesError> {
        Self::with_mean(vec![0.0; dim], sigma0, lambda, seed)
    }

    pub fn with_mean(
        mean: Vec<f64>,
        sigma0: f64,
        lambda: Option<usize>,
        seed: u64,
    ) -> Result<Self, CmaesError> {
        let dim = mean.len();
        if dim == 0 {
            return Err(CmaesError::InvalidDimension);
        }
        if !(sigma0 > 0.0 && sigma0.is_finite()) {
            return Err(CmaesError::InvalidSigma(sigma0));
        }
        let lambda = lambda.unwrap_or_else(|| default_population_size(dim));
        if lambda < 2 {
            return Err(CmaesError::InvalidPopulation(lambda));
        }
        Ok(Self {
            dim,
            params: StrategyParams::new(dim, lambda),
            mean,
            sigma: sigma0,
            covariance: identity(dim),
            path_sigma: vec![0.0; dim],
            path_c: vec![0.0; dim],
            eigen_basis: identity(dim),
            eigen_scales: vec![1.0; dim],
            eigen_generation: 0,
            generation: 0,
            evaluations: 0,
            rng: SeededRng::new(seed),
            pending: None,
            best: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> usize {
        self.params.lambda
    }

    pub fn params(&self) -> &StrategyParams {
        &self.params
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn covariance(&self) -> &[f64] {
        &self.covariance
    }

    pub fn path_sigma(&self) -> &[f64] {
        &self.path_sigma
    }

    pub fn path_c(&self) -> &[f64] {
        &self.path_c
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    pub fn rng(&self) -> &SeededRng {
        &self.rng
    }

    pub fn is_pending(&self) -> bool {
        self.pending.is_some()
    }

    /// Lowest fitness told so far and its candidate.
    pub fn best(&self) -> Option<(f64, &[f64])> {
        self.best.as_ref().map(|(f, x)| (*f, x.as_slice()))
    }

    /// Samples `lambda` candidates `m + sigma * B * D * z`.
    pub fn ask(&mut self) -> Result<Population, CmaesError> {
        if self.pending.is_some() {
            return Err(CmaesError::AskBeforeTell);
        }
        let n = self.dim;
        let mut steps = Vec::with_capacity(self.params.lambda);
        let mut candidates = Vec::with_capacity(self.params.lambda);
        for _ in 0..self.params.lambda {
            let scaled: Vec<f64> = (0..n)
                .map(|i| {
                    let z: f64 = StandardNormal.sample(self.rng.rng());
                    self.eigen_scales[i] * z
                })
                .collect();
            let y: Vec<f64> = (0..n)
                .map(|r| {
                    let row = &self.eigen_basis[r * n..(r + 1) * n];
                    let mut acc = 0.0;
                    for (b, s) in row.iter().zip(&scaled) {
                        acc += b * s;
                    }
                    acc
                })
                .collect();
            let x: Vec<f64> = self
                .mean
                .iter()
                .zip(&y)
                .map(|(m, yi)| m + self.sigma * yi)
                .collect();
            steps.push(y);
            candidates.push(ParamVector(x));
        }
        self.pending = Some(Pending {
            generation: self.generation,
            steps,
        });
        Ok(Population {
            generation: self.generation,
            candidates,
        })
    }

    /// Updates the distribution from the fitness of the outstanding
    /// population (lower is better). Only the ranking of `fitness` matters.
    pub fn tell(&mut self, fitness: &[f64]) -> Result<(), CmaesError> {
        if self.pending.is_none() {
            return Err(CmaesError::TellWithoutAsk);
        }
        let lambda = self.params.lambda;
        if fitness.len() != lambda {
            return Err(CmaesError::LengthMismatch {
                expected: lambda,
                got: fitness.len(),
            });
        }
        if let Some((index, &value)) = fitness.iter().enumerate().find(|(_, f)| !f.is_finite()) {
            return Err(CmaesError::NonFiniteFitness { index, value });
        }
        let pending = self.pending.take().expect("checked above");
        let n = self.dim;
        let p = &self.params;

        let mut order: Vec<usize> = (0..lambda).collect();
        order.sort_by(|&a, &b| fitness[a].total_cmp(&fitness[b]).then(a.cmp(&b)));

        let best_idx = order[0];
        let best_x: Vec<f64> = self
            .mean
            .iter()
            .zip(&pending.steps[best_idx])
            .map(|(m, y)| m + self.sigma * y)
            .collect();
        if self
            .best
            .as_ref()
            .is_none_or(|(f, _)| fitness[best_idx] < *f)
        {
            self.best = Some((fitness[best_idx], best_x));
        }

        // weighted recombination of the mu best steps
        let mut y_w = vec![0.0; n];
        for (w, &k) in p.weights.iter().zip(&order) {
            for (acc, y) in y_w.iter_mut().zip(&pending.steps[k]) {
                *acc += w * y;
            }
        }
        for (m, y) in self.mean.iter_mut().zip(&y_w) {
            *m += self.sigma * y;
        }

        // C^{-1/2} y_w = B D^{-1} B^T y_w
        let b = &self.eigen_basis;
        let bt_y: Vec<f64> = (0..n)
            .map(|c| {
                let mut acc = 0.0;
                for (r, y) in y_w.iter().enumerate() {
                    acc += b[r * n + c] * y;
                }
                acc / self.eigen_scales[c]
            })
            .collect();
        let whitened: Vec<f64> = (0..n)
            .map(|r| {
                let mut acc = 0.0;
                for (c, v) in bt_y.iter().enumerate() {
                    acc += b[r * n + c] * v;
                }
                acc
            })
            .collect();

        let cs = p.c_sigma;
        let ps_coeff = (cs * (2.0 - cs) * p.mu_eff).sqrt();
        for (ps, v) in self.path_sigma.iter_mut().zip(&whitened) {
            *ps = (1.0 - cs) * *ps + ps_coeff * v;
        }
        let ps_norm = self.path_sigma.iter().map(|v| v * v).sum::<f64>().sqrt();
        let gens = (self.generation + 1) as i32;
        let h_sigma = ps_norm / (1.0 - (1.0 - cs).powi(2 * gens)).sqrt() / p.chi_n
            < 1.4 + 2.0 / (n as f64 + 1.0);
        let h = if h_sigma { 1.0 } else { 0.0 };

        let cc = p.c_c;
        let pc_coeff = h * (cc * (2.0 - cc) * p.mu_eff).sqrt();
        for (pc, y) in self.path_c.iter_mut().zip(&y_w) {
            *pc = (1.0 - cc) * *pc + pc_coeff * y;
        }

        let weight_sum: f64 = p.weights.iter().sum();
        let delta_h = (1.0 - h) * cc * (2.0 - cc);
        let decay = 1.0 + p.c_1 * delta_h - p.c_1 - p.c_mu * weight_sum;
        for r in 0..n {
            for c in r..n {
                let mut rank_mu = 0.0;
                for (w, &k) in p.weights.iter().zip(&order) {
                    let y = &pending.steps[k];
                    rank_mu += w * y[r] * y[c];
                }
                let v = decay * self.covariance[r * n + c]
                    + p.c_1 * self.path_c[r] * self.path_c[c]
                    + p.c_mu * rank_mu;
                self.covariance[r * n + c] = v;
                self.covariance[c * n + r] = v;
            }
        }

        self.sigma *= ((cs / p.d_sigma) * (ps_norm / p.chi_n - 1.0)).exp();
        self.generation += 1;
        self.evaluations += lambda;

        if self.generation - self.eigen_generation >= p.eigen_interval {
            self.refresh_eigen();
        }
        Ok(())
    }

    /// Recomputes `B` and `D` from `C`, flooring eigenvalues at [`EIGEN_FLOOR`]
    /// (and rebuilding `C` if any had to be floored).
    pub fn refresh_eigen(&mut self) {
        let n = self.dim;
        let c = DMatrix::from_row_slice(n, n, &self.covariance);
        let sym = (&c + c.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        // NaN eigenvalues are floored too
        let below = |v: f64| v.is_nan() || v < EIGEN_FLOOR;
        let floored = values.iter().any(|&v| below(v));
        for v in &mut values {
            if below(*v) {
                *v = EIGEN_FLOOR;
            }
        }
        let vecs = &eig.eigenvectors;
        for r in 0..n {
            for col in 0..n {
                self.eigen_basis[r * n + col] = vecs[(r, col)];
            }
        }
        if floored {
            for r in 0..n {
                for col in 0..n {
                    let mut acc = 0.0;
                    for (k, v) in values.iter().enumerate() {
                        acc += vecs[(r, k)] * v * vecs[(col, k)];
                    }
                    self.covariance[r * n + col] = acc;
                }
            }
        }
        self.eigen_scales = values.iter().map(|v| v.sqrt()).collect();
        self.eigen_generation = self.generation;
    }

    /// Smallest eigenvalue of the current covariance matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        let c = DMatrix::from_row_slice(self.dim, self.dim, &self.covariance);
        SymmetricEigen::new(c)
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest absolute asymmetry `|C_ij - C_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let n = self.dim;
        let mut worst: f64 = 0.0;
        for r in 0..n {
            for c in 0..n {
                worst = worst.max((self.covariance[r * n + c] - self.covariance[c * n + r]).abs());
            }
        }
        worst
    }

    /// Draws one `u64` from the state's own stream (useful to derive seeds).
    pub fn next_u64(&mut self) -> u64 {
        self.rng.rng().next_u64()
    }
}
