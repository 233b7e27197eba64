//! Planar articulated chain ("snake") swimming in a viscous medium.
//!
//! Each link is a rigid rod with centre position, heading angle and their
//! rates. Link 0 is the head and points along +x at rest; link `i + 1` hangs
//! behind link `i`. Joint `k` connects the rear end of link `k` to the front
//! end of link `k + 1` and is driven by the action of limb `k + 1`.
//!
//! A substep applies joint torques and anisotropic drag explicitly, projects
//! velocities onto the joint constraints (a mass-weighted least-squares
//! correction), advances positions with the corrected velocities and finally
//! rebuilds the chain from the link angles so the joints coincide again.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, MorphGraph};
use crate::policy::Observation;

pub const MAX_LIMBS: usize = 16;
/// Per-limb state width: sin, cos, angular rate, forward and lateral speed.
pub const LIMB_STATE_DIM: usize = 5;
/// Joint gap above which the simulation is considered broken.
pub const CRASH_GAP: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid snake config: {0}")]
    InvalidConfig(String),
    #[error("limb count {0} outside 1..={MAX_LIMBS}")]
    InvalidLimbCount(usize),
    #[error("expected {expected} joint actions, got {got}")]
    ActionDimensionMismatch { expected: usize, got: usize },
    #[error("action {value} at joint {index} is outside [-1, 1]")]
    ActionOutOfRange { index: usize, value: f64 },
    #[error("graph has {graph} nodes but the state has {state} links")]
    GraphStateMismatch { graph: usize, state: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("trajectory io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SnakeConfig {
    pub limb_count: usize,
    /// m
    pub link_length: f64,
    /// kg
    pub link_mass: f64,
    /// Integration substep, s.
    pub dt: f64,
    pub substeps: usize,
    pub tangential_drag: f64,
    pub normal_drag: f64,
    /// N·m per unit action.
    pub torque_scale: f64,
    pub max_steps: usize,
    /// Half-width of the uniform joint-angle noise at reset, rad.
    pub reset_noise: f64,
    /// Reject out-of-range actions instead of clamping them.
    pub strict_actions: bool,
}

impl Default for SnakeConfig {
    fn default() -> Self {
        Self {
            limb_count: 5,
            link_length: 0.5,
            link_mass: 1.0,
            dt: 0.01,
            substeps: 5,
            tangential_drag: 0.1,
            normal_drag: 3.0,
            torque_scale: 1.0,
            max_steps: 1000,
            reset_noise: 0.01,
            strict_actions: false,
        }
    }
}

impl SnakeConfig {
    pub fn with_limbs(limb_count: usize) -> Self {
        Self {
            limb_count,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if !(1..=MAX_LIMBS).contains(&self.limb_count) {
            return Err(EnvError::InvalidLimbCount(self.limb_count));
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.link_length) || !positive(self.link_mass) || !positive(self.dt) {
            return Err(EnvError::InvalidConfig(
                "link length, mass and dt must be positive".into(),
            ));
        }
        if self.substeps == 0 || self.max_steps == 0 {
            return Err(EnvError::InvalidConfig(
                "substeps and max_steps must be at least 1".into(),
            ));
        }
        if !(self.tangential_drag > 0.0
            && self.normal_drag > self.tangential_drag
            && self.normal_drag.is_finite())
        {
            return Err(EnvError::InvalidConfig(
                "drag must satisfy normal > tangential > 0".into(),
            ));
        }
        if !(self.torque_scale >= 0.0 && self.torque_scale.is_finite()) {
            return Err(EnvError::InvalidConfig(
                "torque scale must be finite and non-negative".into(),
            ));
        }
        if !(self.reset_noise >= 0.0 && self.reset_noise.is_finite()) {
            return Err(EnvError::InvalidConfig(
                "reset noise must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn joint_count(&self) -> usize {
        self.limb_count - 1
    }

    /// Time covered by one `step`.
    pub fn control_period(&self) -> f64 {
        self.dt * self.substeps as f64
    }

    pub fn inertia(&self) -> f64 {
        self.link_mass * self.link_length * self.link_length / 12.0
    }

    /// Rotational drag of a rod whose normal drag is spread evenly along it.
    pub fn rotational_drag(&self) -> f64 {
        self.normal_drag * self.link_length * self.link_length / 12.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub position: Vec<[f64; 2]>,
    pub angle: Vec<f64>,
    pub velocity: Vec<[f64; 2]>,
    pub angular_velocity: Vec<f64>,
    pub step: usize,
    pub crashed: bool,
}

impl EnvState {
    pub fn link_count(&self) -> usize {
        self.angle.len()
    }

    pub fn center_of_mass(&self) -> [f64; 2] {
        let n = self.link_count() as f64;
        let (mut x, mut y) = (0.0, 0.0);
        for p in &self.position {
            x += p[0];
            y += p[1];
        }
        [x / n, y / n]
    }

    pub fn kinetic_energy(&self, cfg: &SnakeConfig) -> f64 {
        let inertia = cfg.inertia();
        let mut e = 0.0;
        for (v, w) in self.velocity.iter().zip(&self.angular_velocity) {
            e += 0.5 * cfg.link_mass * (v[0] * v[0] + v[1] * v[1]) + 0.5 * inertia * w * w;
        }
        e
    }

    /// Largest distance between the two endpoints meeting at any joint.
    pub fn max_joint_gap(&self, cfg: &SnakeConfig) -> f64 {
        let half = 0.5 * cfg.link_length;
        let mut worst: f64 = 0.0;
        for k in 0..self.link_count().saturating_sub(1) {
            let (ca, sa) = (self.angle[k].cos(), self.angle[k].sin());
            let (cb, sb) = (self.angle[k + 1].cos(), self.angle[k + 1].sin());
            let rear = [
                self.position[k][0] - half * ca,
                self.position[k][1] - half * sa,
            ];
            let front = [
                self.position[k + 1][0] + half * cb,
                self.position[k + 1][1] + half * sb,
            ];
            worst = worst.max((rear[0] - front[0]).hypot(rear[1] - front[1]));
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        self.position
            .iter()
            .chain(&self.velocity)
            .all(|p| p[0].is_finite() && p[1].is_finite())
            && self
                .angle
                .iter()
                .chain(&self.angular_velocity)
                .all(|v| v.is_finite())
    }

    /// Rigidly rotates the whole state about the origin.
    pub fn rotated(&self, alpha: f64) -> Self {
        let (c, s) = (alpha.cos(), alpha.sin());
        let rot = |p: &[f64; 2]| [c * p[0] - s * p[1], s * p[0] + c * p[1]];
        Self {
            position: self.position.iter().map(rot).collect(),
            angle: self.angle.iter().map(|a| a + alpha).collect(),
            velocity: self.velocity.iter().map(rot).collect(),
            angular_velocity: self.angular_velocity.clone(),
            step: self.step,
            crashed: self.crashed,
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let mut out = self.clone();
        for p in &mut out.position {
            p[0] += dx;
            p[1] += dy;
        }
        out
    }
}

/// Centre positions of a chain with the given angles, head centre at `head`.
fn chain_positions(angles: &[f64], half: f64, head: [f64; 2]) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(angles.len());
    out.push(head);
    for k in 1..angles.len() {
        let prev = out[k - 1];
        out.push([
            prev[0] - half * (angles[k - 1].cos() + angles[k].cos()),
            prev[1] - half * (angles[k - 1].sin() + angles[k].sin()),
        ]);
    }
    out
}

/// Straight chain along +x, perturbed by uniform joint angles in
/// `±reset_noise`, centre of mass at the origin, at rest.
pub fn reset(cfg: &SnakeConfig, seed: u64) -> Result<EnvState, EnvError> {
    cfg.validate()?;
    let n = cfg.limb_count;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut angle = vec![0.0; n];
    for k in 1..n {
        let delta = if cfg.reset_noise > 0.0 {
            rng.random_range(-cfg.reset_noise..=cfg.reset_noise)
        } else {
            0.0
        };
        angle[k] = angle[k - 1] + delta;
    }
    let mut position = chain_positions(&angle, 0.5 * cfg.link_length, [0.0, 0.0]);
    let com = EnvState {
        position: position.clone(),
        angle: angle.clone(),
        ..empty_state(n)
    }
    .center_of_mass();
    for p in &mut position {
        p[0] -= com[0];
        p[1] -= com[1];
    }
    Ok(EnvState {
        position,
        angle,
        ..empty_state(n)
    })
}

fn empty_state(n: usize) -> EnvState {
    EnvState {
        position: vec![[0.0; 2]; n],
        angle: vec![0.0; n],
        velocity: vec![[0.0; 2]; n],
        angular_velocity: vec![0.0; n],
        step: 0,
        crashed: false,
    }
}

/// Removes the constraint-violating part of the link velocities, minimising
/// the kinetic energy of the correction.
fn project_velocities(state: &mut EnvState, cfg: &SnakeConfig) {
    let n = state.link_count();
    if n < 2 {
        return;
    }
    let half = 0.5 * cfg.link_length;
    let rows = 2 * (n - 1);
    let cols = 3 * n;
    let inv = [
        1.0 / cfg.link_mass,
        1.0 / cfg.link_mass,
        1.0 / cfg.inertia(),
    ];
    // rear end of link k minus front end of link k+1, differentiated
    let mut jac = DMatrix::<f64>::zeros(rows, cols);
    for k in 0..n - 1 {
        let na = [-state.angle[k].sin(), state.angle[k].cos()];
        let nb = [-state.angle[k + 1].sin(), state.angle[k + 1].cos()];
        for axis in 0..2 {
            let r = 2 * k + axis;
            jac[(r, 3 * k + axis)] = 1.0;
            jac[(r, 3 * k + 2)] = -half * na[axis];
            jac[(r, 3 * (k + 1) + axis)] = -1.0;
            jac[(r, 3 * (k + 1) + 2)] = -half * nb[axis];
        }
    }
    let mut qdot = DVector::<f64>::zeros(cols);
    for i in 0..n {
        qdot[3 * i] = state.velocity[i][0];
        qdot[3 * i + 1] = state.velocity[i][1];
        qdot[3 * i + 2] = state.angular_velocity[i];
    }
    let mut jm = jac.clone();
    for c in 0..cols {
        let s = inv[c % 3];
        for r in 0..rows {
            jm[(r, c)] *= s;
        }
    }
    let a = &jm * jac.transpose();
    let violation = &jac * &qdot;
    let Some(chol) = a.cholesky() else {
        return;
    };
    let lambda = chol.solve(&violation);
    let correction = jm.transpose() * lambda;
    for i in 0..n {
        state.velocity[i][0] -= correction[3 * i];
        state.velocity[i][1] -= correction[3 * i + 1];
        state.angular_velocity[i] -= correction[3 * i + 2];
    }
}

/// One integration substep with the given per-joint torques (N·m).
pub fn substep(state: &mut EnvState, cfg: &SnakeConfig, torques: &[f64]) {
    let n = state.link_count();
    let dt = cfg.dt;
    let inertia = cfg.inertia();
    let mut link_torque = vec![0.0; n];
    for (k, tau) in torques.iter().enumerate().take(n.saturating_sub(1)) {
        link_torque[k + 1] += tau;
        link_torque[k] -= tau;
    }
    let rot_drag = cfg.rotational_drag();
    for i in 0..n {
        let (c, s) = (state.angle[i].cos(), state.angle[i].sin());
        let v = state.velocity[i];
        let vt = v[0] * c + v[1] * s;
        let vn = -v[0] * s + v[1] * c;
        let ft = -cfg.tangential_drag * vt;
        let fn_ = -cfg.normal_drag * vn;
        let force = [ft * c - fn_ * s, ft * s + fn_ * c];
        state.velocity[i][0] += dt * force[0] / cfg.link_mass;
        state.velocity[i][1] += dt * force[1] / cfg.link_mass;
        let w = state.angular_velocity[i];
        state.angular_velocity[i] += dt * (link_torque[i] - rot_drag * w) / inertia;
    }
    project_velocities(state, cfg);

    let mut predicted = state.position.clone();
    for (p, v) in predicted.iter_mut().zip(&state.velocity) {
        p[0] += dt * v[0];
        p[1] += dt * v[1];
    }
    for (a, w) in state.angle.iter_mut().zip(&state.angular_velocity) {
        *a += dt * w;
    }
    let mut rebuilt = chain_positions(&state.angle, 0.5 * cfg.link_length, [0.0, 0.0]);
    let mean = |ps: &[[f64; 2]]| {
        let (mut x, mut y) = (0.0, 0.0);
        for p in ps {
            x += p[0];
            y += p[1];
        }
        [x / ps.len() as f64, y / ps.len() as f64]
    };
    let target = mean(&predicted);
    let current = mean(&rebuilt);
    for p in &mut rebuilt {
        p[0] += target[0] - current[0];
        p[1] += target[1] - current[1];
    }
    state.position = rebuilt;
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub crashed: bool,
}

/// Advances one control period. `actions` holds one value per joint, i.e.
/// per actuated limb `1..N` in order.
pub fn step(
    state: &mut EnvState,
    actions: &[f64],
    cfg: &SnakeConfig,
) -> Result<StepOutcome, EnvError> {
    let joints = state.link_count().saturating_sub(1);
    if actions.len() != joints {
        return Err(EnvError::ActionDimensionMismatch {
            expected: joints,
            got: actions.len(),
        });
    }
    let mut torques = Vec::with_capacity(joints);
    for (index, &a) in actions.iter().enumerate() {
        let clamped = if a.is_nan() {
            f64::NAN
        } else {
            a.clamp(-1.0, 1.0)
        };
        if clamped != a || a.is_nan() {
            if cfg.strict_actions || a.is_nan() {
                return Err(EnvError::ActionOutOfRange { index, value: a });
            }
            log::warn!("clamping action {a} at joint {index}");
        }
        torques.push(clamped * cfg.torque_scale);
    }
    let before = state.center_of_mass()[0];
    for _ in 0..cfg.substeps {
        substep(state, cfg, &torques);
    }
    state.step += 1;
    let crashed = !state.is_finite() || state.max_joint_gap(cfg) > CRASH_GAP;
    state.crashed |= crashed;
    let after = state.center_of_mass()[0];
    let reward = if crashed {
        0.0
    } else {
        (after - before) / cfg.control_period()
    };
    Ok(StepOutcome {
        reward,
        done: state.crashed || state.step >= cfg.max_steps,
        crashed: state.crashed,
    })
}

/// Per-limb body-frame states plus the normalised hop distance to the torso.
pub fn observe(state: &EnvState, graph: &MorphGraph) -> Result<Observation, EnvError> {
    let n = state.link_count();
    if graph.node_count() != n {
        return Err(EnvError::GraphStateMismatch {
            graph: graph.node_count(),
            state: n,
        });
    }
    let states = (0..n)
        .map(|i| {
            let (s, c) = state.angle[i].sin_cos();
            let v = state.velocity[i];
            vec![
                s,
                c,
                state.angular_velocity[i],
                v[0] * c + v[1] * s,
                -v[0] * s + v[1] * c,
            ]
        })
        .collect();
    let features = graph
        .hop_distances()
        .into_iter()
        .map(|h| vec![h as f64 / n as f64])
        .collect();
    Ok(Observation::new(states, features).expect("uniform layout"))
}

/// Path graph 0–1–…–(N−1) with the non-actuated head as torso.
pub fn make_morphology(limb_count: usize) -> Result<MorphGraph, EnvError> {
    if !(1..=MAX_LIMBS).contains(&limb_count) {
        return Err(EnvError::InvalidLimbCount(limb_count));
    }
    let edges: Vec<_> = (1..limb_count).map(|i| (i - 1, i)).collect();
    let actuated: Vec<bool> = (0..limb_count).map(|i| i > 0).collect();
    Ok(MorphGraph::new(limb_count, &edges, &actuated, 0)?)
}

/// Open-loop travelling wave `a_k = amplitude · sin(2π f t − k φ)`.
///
/// The default is a gentle wave the unlimited joints follow without folding,
/// so the chain swims forward along a nearly straight line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SerpentineGait {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase_lag: f64,
}

impl Default for SerpentineGait {
    fn default() -> Self {
        Self {
            amplitude: 0.1,
            frequency: 1.0,
            phase_lag: 1.5,
        }
    }
}

impl SerpentineGait {
    pub fn actions(&self, time: f64, joints: usize) -> Vec<f64> {
        (0..joints)
            .map(|k| {
                self.amplitude
                    * (2.0 * std::f64::consts::PI * self.frequency * time
                        - k as f64 * self.phase_lag)
                        .sin()
            })
            .collect()
    }
}

/// One row of a trajectory dump.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub com: [f64; 2],
    pub env_reward: f64,
    pub angle: Vec<f64>,
    pub angular_velocity: Vec<f64>,
}

impl TrajectoryRow {
    pub fn capture(state: &EnvState, env_reward: f64) -> Self {
        Self {
            step: state.step,
            com: state.center_of_mass(),
            env_reward,
            angle: state.angle.clone(),
            angular_velocity: state.angular_velocity.clone(),
        }
    }
}

/// Runs `gait` for `steps` control periods from `reset(cfg, seed)`. Row 0 is
/// the initial state.
pub fn rollout_gait(
    cfg: &SnakeConfig,
    seed: u64,
    gait: &SerpentineGait,
    steps: usize,
) -> Result<Vec<TrajectoryRow>, EnvError> {
    let mut state = reset(cfg, seed)?;
    let mut rows = vec![TrajectoryRow::capture(&state, 0.0)];
    for t in 0..steps {
        let actions = gait.actions(t as f64 * cfg.control_period(), cfg.joint_count());
        let out = step(&mut state, &actions, cfg)?;
        rows.push(TrajectoryRow::capture(&state, out.reward));
        if out.crashed {
            break;
        }
    }
    Ok(rows)
}

/// Writes `step, com_x, com_y, env_reward, theta_*, omega_*` rows, preceded
/// by an optional `#` comment line.
pub fn write_trajectory<W: Write>(
    mut out: W,
    rows: &[TrajectoryRow],
    comment: Option<&str>,
) -> Result<(), EnvError> {
    let io = |e: std::io::Error| EnvError::Io(e.to_string());
    if let Some(c) = comment {
        writeln!(out, "# {c}").map_err(io)?;
    }
    let links = rows.first().map_or(0, |r| r.angle.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "step".to_string(),
        "com_x".into(),
        "com_y".into(),
        "env_reward".into(),
    ];
    header.extend((0..links).map(|i| format!("theta_{i}")));
    header.extend((0..links).map(|i| format!("omega_{i}")));
    let csv_err = |e: csv::Error| EnvError::Io(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![
            r.step.to_string(),
            r.com[0].to_string(),
            r.com[1].to_string(),
            r.env_reward.to_string(),
        ];
        rec.extend(r.angle.iter().map(f64::to_string));
        rec.extend(r.angular_velocity.iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(io)
}

pub fn read_trajectory<R: Read>(input: R) -> Result<Vec<TrajectoryRow>, EnvError> {
    let err = |e: String| EnvError::Io(e);
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input);
    let links = (rdr
        .headers()
        .map_err(|e| err(e.to_string()))?
        .len()
        .saturating_sub(4))
        / 2;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let num = |i: usize| -> Result<f64, EnvError> {
            rec.get(i)
                .ok_or_else(|| err(format!("missing column {i}")))?
                .parse::<f64>()
                .map_err(|e| err(e.to_string()))
        };
        rows.push(TrajectoryRow {
            step: num(0)? as usize,
            com: [num(1)?, num(2)?],
            env_reward: num(3)?,
            angle: (0..links).map(|i| num(4 + i)).collect::<Result<_, _>>()?,
            angular_velocity: (0..links)
                .map(|i| num(4 + links + i))
                .collect::<Result<_, _>>()?,
        });
    }
    Ok(rows)
}

/// The same physics integrated with a ten times smaller substep over the same
/// control period; used as the reference for golden trajectories.
pub fn fine_config(cfg: &SnakeConfig) -> SnakeConfig {
    SnakeConfig {
        dt: cfg.dt / 10.0,
        substeps: cfg.substeps * 10,
        ..cfg.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn straight(n: usize) -> SnakeConfig {
        SnakeConfig {
            reset_noise: 0.0,
            ..SnakeConfig::with_limbs(n)
        }
    }

    #[test]
    fn reset_is_deterministic() {
        let cfg = SnakeConfig::default();
        assert_eq!(reset(&cfg, 3).unwrap(), reset(&cfg, 3).unwrap());
        assert_ne!(reset(&cfg, 3).unwrap(), reset(&cfg, 4).unwrap());
    }

    #[test]
    fn straight_reset() {
        let s = reset(&straight(4), 0).unwrap();
        assert_eq!(s.center_of_mass(), [0.0, 0.0]);
        assert!(s.angle.iter().all(|a| *a == 0.0));
        // head in front: centres at 0.75, 0.25, -0.25, -0.75
        let xs: Vec<f64> = s.position.iter().map(|p| p[0]).collect();
        assert_eq!(xs, vec![0.75, 0.25, -0.25, -0.75]);
    }

    #[test]
    fn joints_coincide_at_reset() {
        for n in 3..=7 {
            let cfg = SnakeConfig::with_limbs(n);
            let s = reset(&cfg, n as u64).unwrap();
            assert!(s.max_joint_gap(&cfg) < 1e-9);
            assert!(s.angle.windows(2).all(|w| (w[1] - w[0]).abs() <= 0.01));
        }
    }

    #[test]
    fn config_validation() {
        assert_eq!(
            SnakeConfig::with_limbs(0).validate(),
            Err(EnvError::InvalidLimbCount(0))
        );
        assert_eq!(
            SnakeConfig::with_limbs(17).validate(),
            Err(EnvError::InvalidLimbCount(17))
        );
        let bad = SnakeConfig {
            normal_drag: 0.05,
            ..SnakeConfig::default()
        };
        assert!(matches!(bad.validate(), Err(EnvError::InvalidConfig(_))));
        let bad = SnakeConfig {
            dt: 0.0,
            ..SnakeConfig::default()
        };
        assert!(matches!(reset(&bad, 0), Err(EnvError::InvalidConfig(_))));
    }

    #[test]
    fn zero_actions_from_rest() {
        let cfg = straight(5);
        let mut s = reset(&cfg, 0).unwrap();
        let out = step(&mut s, &[0.0; 4], &cfg).unwrap();
        assert_eq!(out.reward, 0.0);
        assert!(s.velocity.iter().all(|v| *v == [0.0, 0.0]));
        assert!(s.angular_velocity.iter().all(|w| *w == 0.0));
        assert!(!out.done);
    }

    #[test]
    fn step_is_deterministic() {
        let cfg = SnakeConfig::default();
        let mut a = reset(&cfg, 9).unwrap();
        let mut b = a.clone();
        for t in 0..20 {
            let act: Vec<f64> = (0..4).map(|k| ((t * 4 + k) as f64).sin()).collect();
            let ra = step(&mut a, &act, &cfg).unwrap();
            let rb = step(&mut b, &act, &cfg).unwrap();
            assert_eq!(ra.reward.to_bits(), rb.reward.to_bits());
        }
        assert_eq!(a, b);
    }

    #[test]
    fn episode_ends_at_max_steps() {
        let cfg = SnakeConfig {
            max_steps: 3,
            ..SnakeConfig::with_limbs(3)
        };
        let mut s = reset(&cfg, 0).unwrap();
        assert!(!step(&mut s, &[0.5, -0.5], &cfg).unwrap().done);
        assert!(!step(&mut s, &[0.5, -0.5], &cfg).unwrap().done);
        assert!(step(&mut s, &[0.5, -0.5], &cfg).unwrap().done);
    }

    #[test]
    fn action_checks() {
        let cfg = SnakeConfig::with_limbs(3);
        let mut s = reset(&cfg, 0).unwrap();
        assert_eq!(
            step(&mut s, &[0.0], &cfg),
            Err(EnvError::ActionDimensionMismatch {
                expected: 2,
                got: 1
            })
        );
        let mut clamped = s.clone();
        step(&mut clamped, &[3.0, 0.0], &cfg).unwrap();
        let mut unit = s.clone();
        step(&mut unit, &[1.0, 0.0], &cfg).unwrap();
        assert_eq!(clamped, unit);
        let strict = SnakeConfig {
            strict_actions: true,
            ..cfg
        };
        assert_eq!(
            step(&mut s, &[0.0, -1.5], &strict),
            Err(EnvError::ActionOutOfRange {
                index: 1,
                value: -1.5
            })
        );
    }

    #[test]
    fn constraints_hold_under_driving() {
        let cfg = SnakeConfig::with_limbs(6);
        let mut s = reset(&cfg, 1).unwrap();
        let gait = SerpentineGait {
            amplitude: 1.0,
            ..SerpentineGait::default()
        };
        for t in 0..400 {
            let out = step(
                &mut s,
                &gait.actions(t as f64 * cfg.control_period(), 5),
                &cfg,
            )
            .unwrap();
            assert!(!out.crashed);
            assert!(s.max_joint_gap(&cfg) < 1e-9);
        }
    }

    #[test]
    fn observation_at_rest() {
        let cfg = straight(5);
        let s = reset(&cfg, 0).unwrap();
        let obs = observe(&s, &make_morphology(5).unwrap()).unwrap();
        for i in 0..5 {
            assert_eq!(obs.state(i), &[0.0, 1.0, 0.0, 0.0, 0.0]);
        }
        assert_eq!(obs.feature(0), &[0.0]);
        assert_eq!(obs.feature(4), &[4.0 / 5.0]);
    }

    #[test]
    fn observe_checks_graph_size() {
        let s = reset(&straight(4), 0).unwrap();
        assert_eq!(
            observe(&s, &make_morphology(5).unwrap()),
            Err(EnvError::GraphStateMismatch { graph: 5, state: 4 })
        );
    }

    #[test]
    fn morphologies() {
        let g = make_morphology(3).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(g.actuator_count(), 2);
        assert!(!g.is_actuated(0));
        assert_eq!(make_morphology(7).unwrap().actuator_count(), 6);
        assert_eq!(
            make_morphology(1),
            Err(EnvError::Graph(GraphError::NoActuator))
        );
        assert_eq!(make_morphology(0), Err(EnvError::InvalidLimbCount(0)));
    }

    fn driven_state(seed: u64) -> (SnakeConfig, EnvState) {
        let cfg = SnakeConfig::with_limbs(4);
        let mut s = reset(&cfg, seed).unwrap();
        for t in 0..15 {
            step(
                &mut s,
                &SerpentineGait::default().actions(t as f64 * 0.05, 3),
                &cfg,
            )
            .unwrap();
        }
        (cfg, s)
    }

    #[test]
    fn rotation_composes_angles() {
        let (_, s) = driven_state(2);
        let g = make_morphology(4).unwrap();
        let base = observe(&s, &g).unwrap();
        for alpha in [0.3, -1.2, 2.5] {
            let rot = observe(&s.rotated(alpha), &g).unwrap();
            for i in 0..4 {
                let (sb, cb) = (base.state(i)[0], base.state(i)[1]);
                let r = rot.state(i);
                assert!((r[0] - (sb * alpha.cos() + cb * alpha.sin())).abs() < 1e-12);
                assert!((r[1] - (cb * alpha.cos() - sb * alpha.sin())).abs() < 1e-12);
                for k in 2..5 {
                    assert!((r[k] - base.state(i)[k]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn translation_invariance() {
        let (cfg, s) = driven_state(5);
        let g = make_morphology(4).unwrap();
        let mut a = s.clone();
        let mut b = s.translated(7.5, -3.25);
        assert_eq!(observe(&a, &g).unwrap(), observe(&b, &g).unwrap());
        for t in 0..10 {
            let act = SerpentineGait::default().actions(t as f64 * 0.05, 3);
            let ra = step(&mut a, &act, &cfg).unwrap().reward;
            let rb = step(&mut b, &act, &cfg).unwrap().reward;
            assert!((ra - rb).abs() < 1e-9, "{ra} vs {rb}");
        }
    }

    #[test]
    fn serpentine_gait_moves_forward() {
        let cfg = SnakeConfig::with_limbs(5);
        let rows = rollout_gait(&cfg, 0, &SerpentineGait::default(), 200).unwrap();
        assert!(rows.last().unwrap().com[0] > 0.0);
    }

    #[test]
    fn trajectory_csv_roundtrip() {
        let cfg = SnakeConfig::with_limbs(3);
        let rows = rollout_gait(&cfg, 1, &SerpentineGait::default(), 5).unwrap();
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &rows, Some("test")).unwrap();
        assert_eq!(read_trajectory(buf.as_slice()).unwrap(), rows);
    }

    fn random_state(cfg: &SnakeConfig, seed: u64) -> EnvState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.limb_count;
        let mut angle = vec![rng.random_range(-3.0..3.0)];
        for k in 1..n {
            let prev = angle[k - 1];
            angle.push(prev + rng.random_range(-1.2..1.2));
        }
        let position = chain_positions(
            &angle,
            0.5 * cfg.link_length,
            [rng.random_range(-5.0..5.0), 0.0],
        );
        EnvState {
            position,
            angle,
            velocity: (0..n)
                .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
                .collect(),
            angular_velocity: (0..n).map(|_| rng.random_range(-5.0..5.0)).collect(),
            step: 0,
            crashed: false,
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn zero_action_energy_never_grows(seed in any::<u64>(), n in 2usize..8) {
            let cfg = SnakeConfig::with_limbs(n);
            let mut s = random_state(&cfg, seed);
            let zero = vec![0.0; n - 1];
            let mut e = s.kinetic_energy(&cfg);
            for _ in 0..20 {
                substep(&mut s, &cfg, &zero);
                let next = s.kinetic_energy(&cfg);
                prop_assert!(next <= e * (1.0 + 1e-12) + 1e-15, "{} -> {}", e, next);
                e = next;
            }
        }
    }
}
