//! Feudal graph policies for modular locomotion, trained by two cooperating
//! CMA-ES instances on a planar swimming chain.
//!
//! The crate is organised bottom-up:
//!
//! - [`graph`]: limb graphs and the layered manager/worker hierarchy.
//! - [`neural`]: flat-parameter multilayer perceptrons.
//! - [`policy`]: representation, message passing, goal and action stages.
//! - [`reward`]: cosine goal rewards and return bookkeeping.
//! - [`cmaes`]: the evolution strategy.
//! - [`env`]: the snake environment.
//! - [`harness`]: episodes, training, evaluation, transfer and search.

#![allow(clippy::needless_range_loop)]

pub mod cmaes;
pub mod env;
pub mod graph;
pub mod harness;
pub mod neural;
pub mod policy;
pub mod reward;

pub use cmaes::{CmaesError, CmaesState, Population};
pub use env::{EnvError, EnvState, SnakeConfig};
pub use graph::{ClusterSpec, GraphError, Hierarchy, MorphGraph, MorphologyFile};
pub use neural::{Activation, MlpSpec, ParamVector};
pub use policy::{
    ActionSet, FeudalPolicy, GoalSet, Observation, PolicyConfig, PolicyError, Variant,
};
pub use reward::{RewardError, RewardLedger};
