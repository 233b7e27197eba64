//! Shared fixtures for the benchmarks.

use feudal_core::env::{make_morphology, observe, reset};
use feudal_core::{FeudalPolicy, Hierarchy, Observation, PolicyConfig, SnakeConfig, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A policy on the `limbs`-link snake with random parameters and the
/// observation of a freshly reset body.
pub struct PolicyFixture {
    pub policy: FeudalPolicy,
    pub hier: Hierarchy,
    pub obs: Observation,
    pub manager: Vec<f64>,
    pub worker: Vec<f64>,
}

impl PolicyFixture {
    pub fn new(variant: Variant, limbs: usize) -> Self {
        let hier = Hierarchy::two_level(make_morphology(limbs).expect("valid limb count"));
        let policy =
            FeudalPolicy::new(PolicyConfig::snake(variant), &hier).expect("default config");
        let state = reset(&SnakeConfig::with_limbs(limbs), 0).expect("valid config");
        let obs = observe(&state, hier.base()).expect("matching graph");
        let mut rng = ChaCha8Rng::seed_from_u64(limbs as u64);
        let manager = random_params(&mut rng, policy.manager_dim());
        let worker = random_params(&mut rng, policy.worker_dim());
        Self {
            policy,
            hier,
            obs,
            manager,
            worker,
        }
    }
}

pub fn random_params(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_steps() {
        let f = PolicyFixture::new(Variant::FeudGraph, 5);
        let (actions, goals) = f
            .policy
            .step(&f.hier, &f.obs, &f.manager, &f.worker)
            .unwrap();
        assert_eq!(actions.actuated_flat().len(), 4);
        assert_eq!(goals.len(), 5);
    }
}
