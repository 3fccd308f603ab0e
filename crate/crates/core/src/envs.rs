//! Desk-scale constrained point-mass environments and cost-agnostic behaviour policies.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{torque_cost, Dataset, DatasetMeta, Trajectory};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Point masses driven by per-axis torque; cost is the total absolute torque.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    /// Number of independent axes; also the action dimension.
    pub dims: usize,
    pub dt: f64,
    pub friction: f64,
    pub horizon: usize,
}

impl EnvSpec {
    pub fn point1d() -> Self {
        EnvSpec {
            name: "point1d".into(),
            dims: 1,
            dt: 1.0,
            friction: 0.1,
            horizon: 50,
        }
    }

    pub fn point2d() -> Self {
        EnvSpec {
            name: "point2d".into(),
            dims: 2,
            ..Self::point1d()
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "point1d" => Ok(Self::point1d()),
            "point2d" => Ok(Self::point2d()),
            other => Err(Error::Config(format!(
                "unknown environment `{other}` (expected point1d or point2d)"
            ))),
        }
    }

    /// `[x_1..x_dims, v_1..v_dims]`
    pub fn state_dim(&self) -> usize {
        2 * self.dims
    }

    pub fn action_dim(&self) -> usize {
        self.dims
    }

    pub fn initial_state(&self) -> Vec<f64> {
        vec![0.0; self.state_dim()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub cost: f64,
    pub done: bool,
}

/// Pure transition: clips the action to `[-1, 1]`, then
/// `v' = (1 - friction) v + a`, `x' = x + dt v'`, reward `Σ v' dt`, cost `Σ |a|`.
/// Returns the transition and the clipped action.
pub fn point_torque_step(
    state: &[f64],
    action: &[f64],
    spec: &EnvSpec,
) -> Result<(Vec<f64>, f64, f64, Vec<f64>)> {
    let d = spec.dims;
    if state.len() != 2 * d || action.len() != d {
        return Err(Error::shape(
            "point_torque_step",
            &[state.len()],
            &[action.len()],
        ));
    }
    if state.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("environment state".into()));
    }
    let clipped: Vec<f64> = action
        .iter()
        .map(|a| {
            if a.is_finite() {
                a.clamp(-1.0, 1.0)
            } else {
                0.0
            }
        })
        .collect();
    let mut next = vec![0.0; 2 * d];
    let mut reward = 0.0;
    for i in 0..d {
        let v = (1.0 - spec.friction) * state[d + i] + clipped[i];
        next[d + i] = v;
        next[i] = state[i] + spec.dt * v;
        reward += v * spec.dt;
    }
    let cost = torque_cost(&clipped);
    Ok((next, reward, cost, clipped))
}

/// Stateful wrapper around [`point_torque_step`].
#[derive(Debug, Clone)]
pub struct PointTorqueEnv {
    spec: EnvSpec,
    state: Vec<f64>,
    t: usize,
}

impl PointTorqueEnv {
    pub fn new(spec: EnvSpec) -> Self {
        let state = spec.initial_state();
        PointTorqueEnv { spec, state, t: 0 }
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn reset(&mut self) -> Vec<f64> {
        self.state = self.spec.initial_state();
        self.t = 0;
        self.state.clone()
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn timestep(&self) -> usize {
        self.t
    }

    /// Steps the environment; the returned action is the clipped one actually applied.
    pub fn step(&mut self, action: &[f64]) -> Result<(StepResult, Vec<f64>)> {
        let (next, reward, cost, clipped) = point_torque_step(&self.state, action, &self.spec)?;
        self.state = next.clone();
        self.t += 1;
        Ok((
            StepResult {
                next_state: next,
                reward,
                cost,
                done: self.t >= self.spec.horizon,
            },
            clipped,
        ))
    }
}

/// Proportional velocity controller with Gaussian action noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BehaviourPolicy {
    pub gain: f64,
    pub v_target: f64,
    pub noise: f64,
}

pub const GAIN_RANGE: (f64, f64) = (0.1, 1.0);
pub const TARGET_RANGE: (f64, f64) = (0.2, 1.0);
pub const NOISE_RANGE: (f64, f64) = (0.0, 0.1);

impl BehaviourPolicy {
    pub fn sample(rng: &mut Rng) -> Self {
        BehaviourPolicy {
            gain: rng.random_range(GAIN_RANGE.0..GAIN_RANGE.1),
            v_target: rng.random_range(TARGET_RANGE.0..TARGET_RANGE.1),
            noise: rng.random_range(NOISE_RANGE.0..NOISE_RANGE.1),
        }
    }

    pub fn act(&self, state: &[f64], dims: usize, rng: &mut Rng) -> Vec<f64> {
        let noise = Normal::new(0.0, self.noise).unwrap();
        (0..dims)
            .map(|i| {
                let a = self.gain * (self.v_target - state[dims + i]) + noise.sample(rng);
                a.clamp(-1.0, 1.0)
            })
            .collect()
    }

    pub fn rollout(&self, spec: &EnvSpec, gamma_c: f64, rng: &mut Rng) -> Result<Trajectory> {
        let mut env = PointTorqueEnv::new(spec.clone());
        let mut s = env.reset();
        let (mut states, mut actions, mut rewards) = (Vec::new(), Vec::new(), Vec::new());
        loop {
            let a = self.act(&s, spec.dims, rng);
            let (step, applied) = env.step(&a)?;
            states.push(s);
            actions.push(applied);
            rewards.push(step.reward);
            s = step.next_state;
            if step.done {
                break;
            }
        }
        Trajectory::from_rollout(states, actions, rewards, torque_cost, gamma_c)
    }
}

/// Rolls out `n_episodes` behaviour policies with parameters drawn per episode.
pub fn generate_behaviour_data(
    spec: &EnvSpec,
    n_episodes: usize,
    gamma_c: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_episodes == 0 {
        return Err(Error::Config("n_episodes must be at least 1".into()));
    }
    let mut root = rng::seeded(seed);
    let mut trajectories = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        let mut ep_rng = rng::fork(&mut root);
        let policy = BehaviourPolicy::sample(&mut ep_rng);
        trajectories.push(policy.rollout(spec, gamma_c, &mut ep_rng)?);
    }
    Dataset::new(
        DatasetMeta {
            env: spec.name.clone(),
            cost_criterion: "torque".into(),
            gamma_c,
            state_dim: spec.state_dim(),
            action_dim: spec.action_dim(),
            seed,
        },
        trajectories,
    )
}
