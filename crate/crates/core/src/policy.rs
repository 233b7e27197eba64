//! Feudal graph policies.
//!
//! A forward pass runs in four stages over a [`Hierarchy`]:
//!
//! 1. **Representation.** Workers embed their observation (`h = x`, or a
//!    learned linear map). Every upper node aggregates `rho(h)` over its
//!    children, bottom-up.
//! 2. **Propagation.** For each round, workers aggregate neighbour messages
//!    `phi1(h_i, h_j)`; sub-managers additionally aggregate child messages
//!    `phi2(h_i, h_c)`. The update `gamma` either takes the message aggregate
//!    as the new representation (identity) or adds it to the old one
//!    (residual). The top manager keeps the representation it read from its
//!    subordinates during stage 1.
//! 3. **Goals.** Each parent `j` of node `i` emits `psi(h_j, h_i, h_i^1)`.
//! 4. **Actions.** Each worker maps the aggregate of its goals through the
//!    shared action network `mu` (tanh head, so actions lie in `[-1, 1]`).
//!
//! Parameters are split in two flat vectors: the manager vector holds every
//! function upstream of the goals, the worker vector holds `mu` alone.
//!
//! Aggregation sorts its operands into a canonical order before reducing, so
//! outputs are bit-for-bit invariant to node relabelling.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Hierarchy;
use crate::neural::{Activation, MlpSpec, NeuralError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("{what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),
    #[error("worker {0} received no goal")]
    MissingGoal(usize),
    #[error("invalid policy configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Full feudal hierarchy with neighbour message passing.
    FeudGraph,
    /// Feudal hierarchy, no message passing among neighbours.
    FeudDeepSet,
    /// Flat deep-sets baseline: `a_i = mu(x_i, AGGR_j rho(x_j))`.
    DeepSetMlp,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::FeudGraph => "feudgraph",
            Variant::FeudDeepSet => "feuddeepset",
            Variant::DeepSetMlp => "deepsetmlp",
        }
    }

    pub fn is_feudal(self) -> bool {
        !matches!(self, Variant::DeepSetMlp)
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "feudgraph" => Ok(Variant::FeudGraph),
            "feuddeepset" => Ok(Variant::FeudDeepSet),
            "deepsetmlp" => Ok(Variant::DeepSetMlp),
            other => Err(format!("unknown variant `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Sum,
    Mean,
}

/// Node update applied after message aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum UpdateRule {
    /// `h' = messages`
    #[default]
    Identity,
    /// `h' = h + messages`
    Residual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub variant: Variant,
    /// Per-worker state length `d_s`.
    pub state_dim: usize,
    /// Per-worker static feature length; `d_x = state_dim + feature_dim`.
    pub feature_dim: usize,
    /// Representation length `d_h`.
    pub repr_dim: usize,
    /// Goal length `d_g`.
    pub goal_dim: usize,
    pub action_dim: usize,
    /// Message-passing rounds `L_r`.
    pub rounds: usize,
    pub aggregation: Aggregation,
    pub update: UpdateRule,
    pub hidden_width: usize,
    pub hidden_activation: Activation,
    /// Use the identity for the worker input map (requires `repr_dim == d_x`).
    pub w1_identity: bool,
    /// Feed the worker's final representation to `mu` alongside its goal.
    pub action_uses_representation: bool,
    /// One set of `rho`/`phi`/`psi` weights for every level.
    pub share_across_levels: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self::snake(Variant::FeudGraph)
    }
}

impl PolicyConfig {
    /// Defaults for snake limbs: 5 state entries plus the torso-distance feature.
    pub fn snake(variant: Variant) -> Self {
        Self {
            variant,
            state_dim: 5,
            feature_dim: 1,
            repr_dim: 6,
            goal_dim: 5,
            action_dim: 1,
            rounds: 1,
            aggregation: Aggregation::Sum,
            update: UpdateRule::Identity,
            hidden_width: 16,
            hidden_activation: Activation::Tanh,
            w1_identity: true,
            action_uses_representation: false,
            share_across_levels: true,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.state_dim + self.feature_dim
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let positive = [
            ("state_dim", self.state_dim),
            ("repr_dim", self.repr_dim),
            ("goal_dim", self.goal_dim),
            ("action_dim", self.action_dim),
            ("hidden_width", self.hidden_width),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(PolicyError::InvalidConfig(format!(
                    "{name} must be positive"
                )));
            }
        }
        if self.w1_identity && self.repr_dim != self.obs_dim() {
            return Err(PolicyError::InvalidConfig(format!(
                "identity input map needs repr_dim == obs_dim ({} != {})",
                self.repr_dim,
                self.obs_dim()
            )));
        }
        Ok(())
    }

    fn mlp(&self, input: usize, output: usize, out_act: Activation) -> MlpSpec {
        MlpSpec::new(
            vec![input, self.hidden_width, output],
            self.hidden_activation,
            out_act,
        )
        .expect("dimensions validated positive")
    }
}

/// The learned functions of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Module {
    /// Worker input map `W1` (linear, no bias).
    InputMap,
    Rho,
    NeighborMessage,
    ChildMessage,
    Goal,
    Action,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub module: Module,
    pub slot: usize,
    pub offset: usize,
    pub len: usize,
    /// `None` for the bias-free input map.
    pub mlp: Option<MlpSpec>,
}

impl Segment {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Placement of every learned function inside one flat parameter vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamLayout {
    segments: Vec<Segment>,
    len: usize,
}

impl ParamLayout {
    fn push_mlp(&mut self, module: Module, slot: usize, spec: MlpSpec) {
        let len = spec.param_count();
        self.segments.push(Segment {
            module,
            slot,
            offset: self.len,
            len,
            mlp: Some(spec),
        });
        self.len += len;
    }

    fn push_linear(&mut self, module: Module, len: usize) {
        self.segments.push(Segment {
            module,
            slot: 0,
            offset: self.len,
            len,
            mlp: None,
        });
        self.len += len;
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, module: Module, slot: usize) -> Option<&Segment> {
        self.segments
            .iter()
            .find(|s| s.module == module && s.slot == slot)
    }
}

/// Manager and worker layouts for a given configuration and hierarchy depth.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyLayout {
    pub manager: ParamLayout,
    pub worker: ParamLayout,
}

impl PolicyLayout {
    pub fn new(cfg: &PolicyConfig, depth: usize) -> Result<Self, PolicyError> {
        cfg.validate()?;
        if depth < 2 {
            return Err(PolicyError::InvalidConfig(
                "hierarchy needs at least two levels".into(),
            ));
        }
        let mut manager = ParamLayout::default();
        let mut worker = ParamLayout::default();
        let (dx, dh, dg) = (cfg.obs_dim(), cfg.repr_dim, cfg.goal_dim);

        if cfg.variant == Variant::DeepSetMlp {
            worker.push_mlp(Module::Rho, 0, cfg.mlp(dx, dh, Activation::Identity));
            worker.push_mlp(
                Module::Action,
                0,
                cfg.mlp(dx + dh, cfg.action_dim, Activation::Tanh),
            );
            return Ok(Self { manager, worker });
        }

        let top = depth - 1;
        let slots = |count: usize| {
            if cfg.share_across_levels {
                count.min(1)
            } else {
                count
            }
        };
        if !cfg.w1_identity {
            manager.push_linear(Module::InputMap, dh * dx);
        }
        for s in 0..slots(top) {
            manager.push_mlp(Module::Rho, s, cfg.mlp(dh, dh, Activation::Identity));
        }
        if cfg.variant == Variant::FeudGraph {
            for s in 0..slots(top) {
                manager.push_mlp(
                    Module::NeighborMessage,
                    s,
                    cfg.mlp(2 * dh, dh, Activation::Identity),
                );
            }
        }
        for s in 0..slots(top - 1) {
            manager.push_mlp(
                Module::ChildMessage,
                s,
                cfg.mlp(2 * dh, dh, Activation::Identity),
            );
        }
        for s in 0..slots(top) {
            manager.push_mlp(Module::Goal, s, cfg.mlp(3 * dh, dg, Activation::Identity));
        }
        let action_in = if cfg.action_uses_representation {
            dg + dh
        } else {
            dg
        };
        worker.push_mlp(
            Module::Action,
            0,
            cfg.mlp(action_in, cfg.action_dim, Activation::Tanh),
        );
        Ok(Self { manager, worker })
    }
}

/// Per-worker observation: dynamic state `s_i` and static features `f_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    states: Vec<Vec<f64>>,
    features: Vec<Vec<f64>>,
}

impl Observation {
    pub fn new(states: Vec<Vec<f64>>, features: Vec<Vec<f64>>) -> Result<Self, PolicyError> {
        if states.len() != features.len() {
            return Err(PolicyError::DimensionMismatch {
                what: "observation features",
                expected: states.len(),
                got: features.len(),
            });
        }
        for (rows, what) in [
            (&states, "observation state"),
            (&features, "observation feature"),
        ] {
            if let Some(first) = rows.first() {
                if let Some(bad) = rows.iter().find(|r| r.len() != first.len()) {
                    return Err(PolicyError::DimensionMismatch {
                        what,
                        expected: first.len(),
                        got: bad.len(),
                    });
                }
            }
        }
        Ok(Self { states, features })
    }

    pub fn worker_count(&self) -> usize {
        self.states.len()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i]
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i]
    }

    /// `x_i = s_i || f_i`
    pub fn x(&self, i: usize) -> Vec<f64> {
        let mut x = self.states[i].clone();
        x.extend_from_slice(&self.features[i]);
        x
    }

    pub fn is_finite(&self) -> bool {
        self.states
            .iter()
            .chain(&self.features)
            .flatten()
            .all(|v| v.is_finite())
    }

    /// Relabels workers: entry `perm[i]` of the result is worker `i` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut states = vec![Vec::new(); self.states.len()];
        let mut features = vec![Vec::new(); self.features.len()];
        for (i, &p) in perm.iter().enumerate() {
            states[p] = self.states[i].clone();
            features[p] = self.features[i].clone();
        }
        Self { states, features }
    }
}

/// Representations per message-passing round (`rounds[0]` is the initial one),
/// indexed by global node id.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRepresentations {
    rounds: Vec<Vec<Vec<f64>>>,
}

impl NodeRepresentations {
    pub fn initial(&self) -> &[Vec<f64>] {
        &self.rounds[0]
    }

    pub fn last(&self) -> &[Vec<f64>] {
        self.rounds.last().expect("at least the initial round")
    }

    pub fn round(&self, r: usize) -> &[Vec<f64>] {
        &self.rounds[r]
    }

    pub fn round_count(&self) -> usize {
        self.rounds.len()
    }
}

/// Goals `g_{j->i}` grouped by receiving node (global id), parents ascending.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GoalSet {
    by_child: Vec<Vec<(usize, Vec<f64>)>>,
}

impl GoalSet {
    pub fn for_node(&self, child: usize) -> &[(usize, Vec<f64>)] {
        self.by_child.get(child).map_or(&[], Vec::as_slice)
    }

    pub fn get(&self, parent: usize, child: usize) -> Option<&[f64]> {
        self.for_node(child)
            .iter()
            .find(|(p, _)| *p == parent)
            .map(|(_, g)| g.as_slice())
    }

    pub fn len(&self) -> usize {
        self.by_child.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &[f64])> {
        self.by_child
            .iter()
            .enumerate()
            .flat_map(|(c, gs)| gs.iter().map(move |(p, g)| (*p, c, g.as_slice())))
    }
}

/// Per-worker actions; auxiliary (non-actuated) workers hold an empty vector.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ActionSet {
    pub per_worker: Vec<Vec<f64>>,
}

impl ActionSet {
    /// Concatenated actions of actuated workers in index order.
    pub fn actuated_flat(&self) -> Vec<f64> {
        self.per_worker.iter().flatten().copied().collect()
    }
}

/// Reduces vectors with a permutation-invariant operator. Operands are sorted
/// lexicographically (IEEE total order) first so the result does not depend on
/// the order they were supplied in. An empty set reduces to zeros.
pub fn aggregate(kind: Aggregation, mut items: Vec<Vec<f64>>, dim: usize) -> Vec<f64> {
    items.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    let mut acc = vec![0.0; dim];
    for item in &items {
        for (a, v) in acc.iter_mut().zip(item) {
            *a += v;
        }
    }
    if kind == Aggregation::Mean && !items.is_empty() {
        let n = items.len() as f64;
        for a in &mut acc {
            *a /= n;
        }
    }
    acc
}

fn concat(parts: &[&[f64]]) -> Vec<f64> {
    let mut out = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for p in parts {
        out.extend_from_slice(p);
    }
    out
}

/// A configured policy bound to one hierarchy depth.
#[derive(Debug, Clone)]
pub struct FeudalPolicy {
    cfg: PolicyConfig,
    layout: PolicyLayout,
    depth: usize,
}

impl FeudalPolicy {
    pub fn new(cfg: PolicyConfig, hier: &Hierarchy) -> Result<Self, PolicyError> {
        let depth = hier.depth();
        let layout = PolicyLayout::new(&cfg, depth)?;
        Ok(Self { cfg, layout, depth })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &PolicyLayout {
        &self.layout
    }

    pub fn manager_dim(&self) -> usize {
        self.layout.manager.len()
    }

    pub fn worker_dim(&self) -> usize {
        self.layout.worker.len()
    }

    fn slot(&self, index: usize) -> usize {
        if self.cfg.share_across_levels {
            0
        } else {
            index
        }
    }

    fn run_mlp(
        &self,
        layout: &ParamLayout,
        module: Module,
        slot: usize,
        params: &[f64],
        input: &[f64],
    ) -> Result<Vec<f64>, PolicyError> {
        let seg = layout
            .segment(module, self.slot(slot))
            .ok_or(PolicyError::InvalidConfig(format!(
                "layout has no {module:?} slot {slot}"
            )))?;
        let spec = seg.mlp.as_ref().expect("mlp segment");
        Ok(spec.forward(&params[seg.range()], input)?)
    }

    fn check_hierarchy(&self, hier: &Hierarchy) -> Result<(), PolicyError> {
        if hier.depth() != self.depth {
            return Err(PolicyError::DimensionMismatch {
                what: "hierarchy depth",
                expected: self.depth,
                got: hier.depth(),
            });
        }
        Ok(())
    }

    fn check_params(
        layout: &ParamLayout,
        params: &[f64],
        what: &'static str,
    ) -> Result<(), PolicyError> {
        if params.len() != layout.len() {
            return Err(PolicyError::DimensionMismatch {
                what,
                expected: layout.len(),
                got: params.len(),
            });
        }
        Ok(())
    }

    fn check_obs(&self, hier: &Hierarchy, obs: &Observation) -> Result<(), PolicyError> {
        if obs.worker_count() != hier.worker_count() {
            return Err(PolicyError::DimensionMismatch {
                what: "observed workers",
                expected: hier.worker_count(),
                got: obs.worker_count(),
            });
        }
        for i in 0..obs.worker_count() {
            let (s, f) = (obs.state(i).len(), obs.feature(i).len());
            if s != self.cfg.state_dim {
                return Err(PolicyError::DimensionMismatch {
                    what: "state",
                    expected: self.cfg.state_dim,
                    got: s,
                });
            }
            if f != self.cfg.feature_dim {
                return Err(PolicyError::DimensionMismatch {
                    what: "feature",
                    expected: self.cfg.feature_dim,
                    got: f,
                });
            }
        }
        if !obs.is_finite() {
            return Err(PolicyError::NonFiniteInput("observation"));
        }
        Ok(())
    }

    /// Worker embeddings, then bottom-up `AGGR_{c in C(i)} rho(h_c)`.
    pub fn init_representations(
        &self,
        hier: &Hierarchy,
        obs: &Observation,
        manager: &[f64],
    ) -> Result<NodeRepresentations, PolicyError> {
        self.check_hierarchy(hier)?;
        self.check_obs(hier, obs)?;
        Self::check_params(&self.layout.manager, manager, "manager parameters")?;
        let dh = self.cfg.repr_dim;
        let mut h = vec![Vec::new(); hier.node_count()];
        for (i, slot) in h.iter_mut().enumerate().take(hier.worker_count()) {
            let x = obs.x(i);
            *slot = match self.layout.manager.segment(Module::InputMap, 0) {
                None => x,
                Some(seg) => {
                    let w = &manager[seg.range()];
                    w.chunks_exact(x.len())
                        .map(|row| {
                            let mut z = 0.0;
                            for (a, b) in row.iter().zip(&x) {
                                z += a * b;
                            }
                            z
                        })
                        .collect()
                }
            };
        }
        for level in 1..hier.depth() {
            for node in hier.nodes_at(level) {
                let msgs = hier
                    .children(node)
                    .iter()
                    .map(|&c| {
                        self.run_mlp(&self.layout.manager, Module::Rho, level - 1, manager, &h[c])
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                h[node] = aggregate(self.cfg.aggregation, msgs, dh);
            }
        }
        Ok(NodeRepresentations { rounds: vec![h] })
    }

    /// `L_r` rounds of same-level and child-to-parent message passing.
    pub fn propagate(
        &self,
        hier: &Hierarchy,
        reps: NodeRepresentations,
        manager: &[f64],
    ) -> Result<NodeRepresentations, PolicyError> {
        self.check_hierarchy(hier)?;
        Self::check_params(&self.layout.manager, manager, "manager parameters")?;
        let dh = self.cfg.repr_dim;
        let top = hier.top_level();
        let mut rounds = reps.rounds;
        for _ in 0..self.cfg.rounds {
            let h = rounds.last().expect("initial round present");
            let mut next = h.clone();
            for (i, out) in next.iter_mut().enumerate() {
                let level = hier.level_of(i);
                if level == top {
                    continue;
                }
                let mut m = vec![0.0; dh];
                if self.cfg.variant == Variant::FeudGraph {
                    let msgs = hier
                        .neighbors(i)
                        .map(|j| {
                            let input = concat(&[&h[i], &h[j]]);
                            self.run_mlp(
                                &self.layout.manager,
                                Module::NeighborMessage,
                                level,
                                manager,
                                &input,
                            )
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    m = aggregate(self.cfg.aggregation, msgs, dh);
                }
                if level > 0 {
                    let msgs = hier
                        .children(i)
                        .iter()
                        .map(|&c| {
                            let input = concat(&[&h[i], &h[c]]);
                            self.run_mlp(
                                &self.layout.manager,
                                Module::ChildMessage,
                                level - 1,
                                manager,
                                &input,
                            )
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    let mc = aggregate(self.cfg.aggregation, msgs, dh);
                    for (a, b) in m.iter_mut().zip(&mc) {
                        *a += b;
                    }
                }
                *out = match self.cfg.update {
                    UpdateRule::Identity => m,
                    UpdateRule::Residual => h[i].iter().zip(&m).map(|(a, b)| a + b).collect(),
                };
            }
            rounds.push(next);
        }
        Ok(NodeRepresentations { rounds })
    }

    /// `g_{j->i} = psi(h_j, h_i, h_i^1)` for every hierarchical edge.
    pub fn generate_goals(
        &self,
        hier: &Hierarchy,
        reps: &NodeRepresentations,
        manager: &[f64],
    ) -> Result<GoalSet, PolicyError> {
        self.check_hierarchy(hier)?;
        Self::check_params(&self.layout.manager, manager, "manager parameters")?;
        let (last, first) = (reps.last(), reps.initial());
        let mut by_child = vec![Vec::new(); hier.node_count()];
        for (i, goals) in by_child.iter_mut().enumerate() {
            for &j in hier.parents(i) {
                let input = concat(&[&last[j], &last[i], &first[i]]);
                let g = self.run_mlp(
                    &self.layout.manager,
                    Module::Goal,
                    hier.level_of(j) - 1,
                    manager,
                    &input,
                )?;
                goals.push((j, g));
            }
        }
        Ok(GoalSet { by_child })
    }

    /// `a_i = mu(AGGR_{j in P(i)} g_{j->i} [, h_i])`, emitted for actuated workers.
    pub fn generate_actions(
        &self,
        hier: &Hierarchy,
        goals: &GoalSet,
        reps: &NodeRepresentations,
        worker: &[f64],
    ) -> Result<ActionSet, PolicyError> {
        self.check_hierarchy(hier)?;
        Self::check_params(&self.layout.worker, worker, "worker parameters")?;
        let base = hier.base();
        let mut per_worker = Vec::with_capacity(hier.worker_count());
        for i in 0..hier.worker_count() {
            let gs = goals.for_node(i);
            if gs.is_empty() {
                return Err(PolicyError::MissingGoal(i));
            }
            let mut input = aggregate(
                self.cfg.aggregation,
                gs.iter().map(|(_, g)| g.clone()).collect(),
                self.cfg.goal_dim,
            );
            if self.cfg.action_uses_representation {
                input.extend_from_slice(&reps.last()[i]);
            }
            let a = self.run_mlp(&self.layout.worker, Module::Action, 0, worker, &input)?;
            per_worker.push(if base.is_actuated(i) { a } else { Vec::new() });
        }
        Ok(ActionSet { per_worker })
    }

    fn deep_set_step(
        &self,
        hier: &Hierarchy,
        obs: &Observation,
        worker: &[f64],
    ) -> Result<ActionSet, PolicyError> {
        self.check_obs(hier, obs)?;
        Self::check_params(&self.layout.worker, worker, "worker parameters")?;
        let xs: Vec<Vec<f64>> = (0..obs.worker_count()).map(|i| obs.x(i)).collect();
        let embedded = xs
            .iter()
            .map(|x| self.run_mlp(&self.layout.worker, Module::Rho, 0, worker, x))
            .collect::<Result<Vec<_>, _>>()?;
        let pooled = aggregate(self.cfg.aggregation, embedded, self.cfg.repr_dim);
        let base = hier.base();
        let mut per_worker = Vec::with_capacity(xs.len());
        for (i, x) in xs.iter().enumerate() {
            let a = self.run_mlp(
                &self.layout.worker,
                Module::Action,
                0,
                worker,
                &concat(&[x, &pooled]),
            )?;
            per_worker.push(if base.is_actuated(i) { a } else { Vec::new() });
        }
        Ok(ActionSet { per_worker })
    }

    /// Full forward pass. The deep-sets baseline produces no goals.
    pub fn step(
        &self,
        hier: &Hierarchy,
        obs: &Observation,
        manager: &[f64],
        worker: &[f64],
    ) -> Result<(ActionSet, GoalSet), PolicyError> {
        Ok(self.step_traced(hier, obs, manager, worker)?.0)
    }

    /// Like [`Self::step`], also returning the node representations.
    pub fn step_traced(
        &self,
        hier: &Hierarchy,
        obs: &Observation,
        manager: &[f64],
        worker: &[f64],
    ) -> Result<((ActionSet, GoalSet), Option<NodeRepresentations>), PolicyError> {
        self.check_hierarchy(hier)?;
        if self.cfg.variant == Variant::DeepSetMlp {
            Self::check_params(&self.layout.manager, manager, "manager parameters")?;
            let actions = self.deep_set_step(hier, obs, worker)?;
            return Ok(((actions, GoalSet::default()), None));
        }
        let reps = self.init_representations(hier, obs, manager)?;
        let reps = self.propagate(hier, reps, manager)?;
        let goals = self.generate_goals(hier, &reps, manager)?;
        let actions = self.generate_actions(hier, &goals, &reps, worker)?;
        Ok(((actions, goals), Some(reps)))
    }
}

/// Convenience wrapper around [`FeudalPolicy::step`].
pub fn policy_step(
    cfg: &PolicyConfig,
    hier: &Hierarchy,
    obs: &Observation,
    manager: &[f64],
    worker: &[f64],
) -> Result<(ActionSet, GoalSet), PolicyError> {
    FeudalPolicy::new(cfg.clone(), hier)?.step(hier, obs, manager, worker)
}
