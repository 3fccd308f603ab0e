//! Trajectories, hindsight cost relabeling, threshold assignment, windowed
//! sampling and the on-disk dataset format.
//!
//! Rewards and costs are stored on a fixed `2^-32` grid. With per-episode
//! magnitudes far below `2^21`, every suffix sum and every difference of
//! consecutive suffix sums is then exact in `f64`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

const GRID: f64 = 4_294_967_296.0; // 2^32

/// Rounds to the fixed accounting grid.
pub fn quantize(x: f64) -> f64 {
    (x * GRID).round() / GRID
}

/// Total absolute torque over the action components.
pub fn torque_cost(action: &[f64]) -> f64 {
    action.iter().map(|a| a.abs()).sum()
}

/// `out[t] = Σ_{t' >= t} x[t']`
pub fn suffix_sums(x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let mut acc = 0.0;
    for t in (0..x.len()).rev() {
        acc += x[t];
        out[t] = acc;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub costs: Vec<f64>,
    pub rtg: Vec<f64>,
    pub ctg: Vec<f64>,
    pub limit_token: f64,
}

impl Trajectory {
    /// Builds a trajectory from stored fields; RTG, CTG and the limit token are derived.
    pub fn from_parts(
        states: Vec<Vec<f64>>,
        actions: Vec<Vec<f64>>,
        rewards: Vec<f64>,
        costs: Vec<f64>,
    ) -> Result<Self> {
        let t = states.len();
        if t == 0 || actions.len() != t || rewards.len() != t || costs.len() != t {
            return Err(Error::shape(
                "trajectory",
                &[states.len(), actions.len()],
                &[rewards.len(), costs.len()],
            ));
        }
        if let Some(c) = costs.iter().find(|c| !(**c >= 0.0)) {
            return Err(Error::Config(format!(
                "costs must be non-negative, got {c}"
            )));
        }
        let all_finite = states
            .iter()
            .chain(actions.iter())
            .flatten()
            .chain(&rewards)
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::NonFinite("trajectory".into()));
        }
        let rewards: Vec<f64> = rewards.into_iter().map(quantize).collect();
        let costs: Vec<f64> = costs.into_iter().map(quantize).collect();
        let rtg = suffix_sums(&rewards);
        let ctg = suffix_sums(&costs);
        let limit_token = ctg[0];
        Ok(Trajectory {
            states,
            actions,
            rewards,
            costs,
            rtg,
            ctg,
            limit_token,
        })
    }

    /// Builds a trajectory whose step costs are `γ_c^t · cost_fn(a_t)`.
    pub fn from_rollout<F: Fn(&[f64]) -> f64>(
        states: Vec<Vec<f64>>,
        actions: Vec<Vec<f64>>,
        rewards: Vec<f64>,
        cost_fn: F,
        gamma_c: f64,
    ) -> Result<Self> {
        check_gamma(gamma_c)?;
        let costs = discounted_costs(&actions, cost_fn, gamma_c);
        Self::from_parts(states, actions, rewards, costs)
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn reward_return(&self) -> f64 {
        self.rtg[0]
    }

    pub fn cost_return(&self) -> f64 {
        self.ctg[0]
    }
}

fn check_gamma(gamma_c: f64) -> Result<()> {
    if gamma_c > 0.0 && gamma_c <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "gamma_c must lie in (0, 1], got {gamma_c}"
        )))
    }
}

fn discounted_costs<F: Fn(&[f64]) -> f64>(
    actions: &[Vec<f64>],
    cost_fn: F,
    gamma_c: f64,
) -> Vec<f64> {
    let mut w = 1.0;
    actions
        .iter()
        .map(|a| {
            let c = w * cost_fn(a);
            w *= gamma_c;
            c
        })
        .collect()
}

/// Hindsight relabeling: recomputes costs from the actions under a cost
/// criterion with discount `γ_c`, then RTG, CTG and `limit_token = ctg[0]`.
pub fn relabel<F: Fn(&[f64]) -> f64>(
    traj: &Trajectory,
    cost_fn: F,
    gamma_c: f64,
) -> Result<Trajectory> {
    check_gamma(gamma_c)?;
    let costs = discounted_costs(&traj.actions, cost_fn, gamma_c);
    Trajectory::from_parts(
        traj.states.clone(),
        traj.actions.clone(),
        traj.rewards.clone(),
        costs,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub env: String,
    pub cost_criterion: String,
    pub gamma_c: f64,
    pub state_dim: usize,
    pub action_dim: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(meta: DatasetMeta, trajectories: Vec<Trajectory>) -> Result<Self> {
        check_gamma(meta.gamma_c)?;
        let mut ds = Dataset {
            meta,
            trajectories: Vec::with_capacity(trajectories.len()),
        };
        for t in trajectories {
            ds.push(t)?;
        }
        Ok(ds)
    }

    /// Appends a trajectory; existing trajectories are never touched.
    pub fn push(&mut self, traj: Trajectory) -> Result<()> {
        let (sd, ad) = (self.meta.state_dim, self.meta.action_dim);
        if traj.states.iter().any(|s| s.len() != sd) || traj.actions.iter().any(|a| a.len() != ad) {
            return Err(Error::shape(
                "dataset push",
                &[sd, ad],
                &[traj.states[0].len(), traj.actions[0].len()],
            ));
        }
        self.trajectories.push(traj);
        Ok(())
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn total_steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn cost_returns(&self) -> Vec<f64> {
        self.trajectories
            .iter()
            .map(Trajectory::cost_return)
            .collect()
    }

    pub fn reward_returns(&self) -> Vec<f64> {
        self.trajectories
            .iter()
            .map(Trajectory::reward_return)
            .collect()
    }

    pub fn max_timestep(&self) -> usize {
        self.trajectories
            .iter()
            .map(Trajectory::len)
            .max()
            .unwrap_or(0)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let header = FileHeader {
            format: FORMAT_TAG.into(),
            version: FORMAT_VERSION,
            meta: self.meta.clone(),
        };
        let io = |e: std::io::Error| Error::io(path, e);
        serde_json::to_writer(&mut w, &header).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").map_err(io)?;
        for t in &self.trajectories {
            let rec = TrajectoryRecord {
                states: t.states.clone(),
                actions: t.actions.clone(),
                rewards: t.rewards.clone(),
                costs: t.costs.clone(),
            };
            serde_json::to_writer(&mut w, &rec).map_err(|e| io(e.into()))?;
            w.write_all(b"\n").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = reader.lines().enumerate();
        let (_, first) = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing header".into()))?;
        let first = first.map_err(|e| Error::io(path, e))?;
        let header: FileHeader =
            serde_json::from_str(&first).map_err(|e| parse_err(1, e.to_string()))?;
        if header.format != FORMAT_TAG || header.version != FORMAT_VERSION {
            return Err(parse_err(
                1,
                format!("unsupported format {} v{}", header.format, header.version),
            ));
        }
        let mut ds =
            Dataset::new(header.meta, Vec::new()).map_err(|e| parse_err(1, e.to_string()))?;
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TrajectoryRecord =
                serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e.to_string()))?;
            let traj = Trajectory::from_parts(rec.states, rec.actions, rec.rewards, rec.costs)
                .map_err(|e| parse_err(i + 1, e.to_string()))?;
            ds.push(traj).map_err(|e| parse_err(i + 1, e.to_string()))?;
        }
        Ok(ds)
    }
}

const FORMAT_TAG: &str = "saformer-dataset";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileHeader {
    format: String,
    version: u32,
    meta: DatasetMeta,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryRecord {
    states: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
    rewards: Vec<f64>,
    costs: Vec<f64>,
}

/// Nearest-rank percentile of the trajectory cost returns: the element at
/// index `ceil(p·n) − 1` of the ascending sort.
pub fn percentile_limit(dataset: &Dataset, p: f64) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    nearest_rank(&dataset.cost_returns(), p)
}

pub fn nearest_rank(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(format!(
            "percentile must lie in (0, 1], got {p}"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    Ok(sorted[rank - 1])
}

/// Normalized cost tokens are clipped to this magnitude so that arbitrarily
/// large (or infinite) budgets still yield finite network inputs.
pub const COST_TOKEN_CAP: f64 = 10.0;

/// Dataset-derived scaling for network inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
    pub reward_scale: f64,
    pub cost_scale: f64,
}

impl Normalizer {
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let d = ds.meta.state_dim;
        let n = ds.total_steps() as f64;
        let mut mean = vec![0.0; d];
        for t in ds.trajectories() {
            for s in &t.states {
                mean.iter_mut().zip(s).for_each(|(m, v)| *m += v);
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for t in ds.trajectories() {
            for s in &t.states {
                for i in 0..d {
                    var[i] += (s[i] - mean[i]).powi(2);
                }
            }
        }
        let std = var
            .iter()
            .map(|v| (v / n).sqrt())
            .map(|s| if s > 1e-6 { s } else { 1.0 })
            .collect();
        let scale = |xs: Vec<f64>| {
            let m = xs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            if m > 1e-8 {
                m
            } else {
                1.0
            }
        };
        Ok(Normalizer {
            state_mean: mean,
            state_std: std,
            reward_scale: scale(ds.reward_returns()),
            cost_scale: scale(ds.cost_returns()),
        })
    }

    pub fn state(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .zip(&self.state_mean)
            .zip(&self.state_std)
            .map(|((v, m), sd)| (v - m) / sd)
            .collect()
    }

    pub fn rtg(&self, r: f64) -> f64 {
        r / self.reward_scale
    }

    pub fn rtg_raw(&self, r: f64) -> f64 {
        r * self.reward_scale
    }

    /// Normalized CTG or cost-limit token.
    pub fn cost(&self, c: f64) -> f64 {
        (c / self.cost_scale).clamp(-COST_TOKEN_CAP, COST_TOKEN_CAP)
    }

    pub fn cost_raw(&self, c: f64) -> f64 {
        c * self.cost_scale
    }
}

/// One timestep of a context window, in normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowStep {
    pub timestep: usize,
    pub limit: f64,
    pub ctg: f64,
    pub rtg: f64,
    pub state: Vec<f64>,
    pub action: Vec<f64>,
}

/// `pad` invalid timesteps followed by `steps`, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub pad: usize,
    pub steps: Vec<WindowStep>,
    pub state_dim: usize,
    pub action_dim: usize,
}

impl Window {
    pub fn context_len(&self) -> usize {
        self.pad + self.steps.len()
    }

    /// Same window with `extra` more padded timesteps on the left.
    pub fn with_extra_padding(&self, extra: usize) -> Window {
        Window {
            pad: self.pad + extra,
            ..self.clone()
        }
    }
}

/// The window `[max(0, t−K+1), t]` of `traj`, left-padded to `K` timesteps.
pub fn window_ending_at(traj: &Trajectory, t: usize, k: usize, norm: &Normalizer) -> Window {
    let start = (t + 1).saturating_sub(k);
    let limit = norm.cost(traj.limit_token);
    let steps = (start..=t)
        .map(|i| WindowStep {
            timestep: i,
            limit,
            ctg: norm.cost(traj.ctg[i]),
            rtg: norm.rtg(traj.rtg[i]),
            state: norm.state(&traj.states[i]),
            action: traj.actions[i].clone(),
        })
        .collect::<Vec<_>>();
    Window {
        pad: k - steps.len(),
        steps,
        state_dim: traj.states[0].len(),
        action_dim: traj.actions[0].len(),
    }
}

/// Draws an end timestep uniformly over every timestep in the dataset
/// (trajectories weighted by length) and returns the window ending there.
pub fn sample_window(ds: &Dataset, k: usize, norm: &Normalizer, rng: &mut Rng) -> Result<Window> {
    if k == 0 {
        return Err(Error::Config("window length K must be at least 1".into()));
    }
    let total = ds.total_steps();
    if total == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut u = rng.random_range(0..total);
    for traj in ds.trajectories() {
        if u < traj.len() {
            return Ok(window_ending_at(traj, u, k, norm));
        }
        u -= traj.len();
    }
    unreachable!("u < total_steps")
}
