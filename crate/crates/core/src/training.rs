//! Offline training, policy evaluation and online fine-tuning.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::actor::{Actor, ActorMode};
use crate::checkpoint::{ActorSection, Checkpoint, CriticSection};
use crate::config::RunConfig;
use crate::critic::Critic;
use crate::data::{sample_window, torque_cost, Dataset, Normalizer, Trajectory, Window};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::executor::{run_episode, CriticScorer, EpisodeRecord, ExecConfig, Policy, Verification};
use crate::numerics::{clip_grad_norm, AdamState, ModelParams, ParamVars, Tape, Var};
use crate::parallel::{self, Exec};
use crate::rng::{self, Rng};

/// Windows per gradient task; fixed so results do not depend on thread count.
const CHUNK: usize = 8;

/// Bounds of the entropy multiplier's logarithm; the upper one caps it at 100.
pub const LOG_MULTIPLIER_MIN: f64 = -20.0;
pub const LOG_MULTIPLIER_MAX: f64 = 4.605_170_185_988_092;
/// Starting multiplier. At 1 the entropy bonus cancels the `log σ` term of
/// the Gaussian likelihood and nothing bounds the action spread.
pub const INITIAL_MULTIPLIER: f64 = 0.1;
/// Dataset windows averaged when measuring the offline actor's entropy.
const ENTROPY_PROBE_WINDOWS: usize = 256;

/// Actor, critic and everything needed to run them.
#[derive(Debug, Clone)]
pub struct Models {
    pub actor: Actor,
    pub actor_params: ModelParams,
    pub critic: Critic,
    pub critic_params: ModelParams,
    pub norm: Normalizer,
    pub env: EnvSpec,
    pub gamma_c: f64,
}

impl Models {
    /// Fresh models sized for `ds`; initialization draws from `rng`.
    pub fn init(ds: &Dataset, env: &EnvSpec, cfg: &RunConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        if env.state_dim() != ds.meta.state_dim || env.action_dim() != ds.meta.action_dim {
            return Err(Error::Config(format!(
                "dataset dimensions ({}, {}) do not match environment `{}`",
                ds.meta.state_dim, ds.meta.action_dim, env.name
            )));
        }
        let norm = Normalizer::from_dataset(ds)?;
        let mc = cfg.model(
            ds.meta.state_dim,
            ds.meta.action_dim,
            env.horizon.max(ds.max_timestep()),
        );
        let actor = Actor::new(cfg.mode, mc.clone())?;
        let critic = Critic::new(mc)?;
        let actor_params = actor.init_params(&mut rng::fork(rng));
        let critic_params = critic.init_params(&mut rng::fork(rng));
        Ok(Models {
            actor,
            actor_params,
            critic,
            critic_params,
            norm,
            env: env.clone(),
            gamma_c: ds.meta.gamma_c,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Ok(Models {
            actor: ck.actor()?,
            actor_params: ck.actor.params.clone(),
            critic: ck.critic()?,
            critic_params: ck.critic.params.clone(),
            norm: ck.normalizer.clone(),
            env: ck.env.clone(),
            gamma_c: ck.gamma_c,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            ActorSection {
                mode: self.actor.mode,
                config: self.actor.cfg.clone(),
                params: self.actor_params.clone(),
            },
            CriticSection {
                config: self.critic.cfg.clone(),
                params: self.critic_params.clone(),
            },
            self.norm.clone(),
            self.env.clone(),
            self.gamma_c,
        )
    }

    pub fn policy(&self) -> Policy<'_> {
        Policy {
            actor: &self.actor,
            params: &self.actor_params,
            norm: &self.norm,
        }
    }

    pub fn scorer(&self) -> CriticScorer<'_> {
        CriticScorer {
            critic: &self.critic,
            params: &self.critic_params,
            norm: &self.norm,
        }
    }

    pub fn run_episode(&self, d: f64, exec: &ExecConfig, seed: u64) -> Result<EpisodeRecord> {
        run_episode(&self.env, &self.policy(), &self.scorer(), d, exec, seed)
    }
}

/// Summed flat gradient and summed per-item statistics of `f` over `items`.
fn accumulate<T, F>(
    exec: Exec,
    params: &ModelParams,
    items: &[T],
    f: F,
) -> Result<(Vec<f64>, Vec<f64>)>
where
    T: Sync,
    F: Fn(&mut Tape, &ParamVars, &T) -> Result<(Var, Vec<f64>)> + Sync + Send,
{
    let chunks: Vec<&[T]> = items.chunks(CHUNK).collect();
    let parts = parallel::map(exec, &chunks, |chunk| -> Result<(Vec<f64>, Vec<f64>)> {
        // one tape per chunk: parameters are recorded once and a single sweep
        // differentiates the sum of the chunk's losses
        let mut tape = Tape::new();
        let pv = tape.params(params);
        let mut total: Option<Var> = None;
        let mut stats: Vec<f64> = Vec::new();
        for item in chunk.iter() {
            let (loss, st) = f(&mut tape, &pv, item)?;
            total = Some(match total {
                None => loss,
                Some(t) => tape.add(t, loss)?,
            });
            if stats.is_empty() {
                stats = st;
            } else {
                stats.iter_mut().zip(&st).for_each(|(a, b)| *a += b);
            }
        }
        let total = total.expect("chunks are non-empty");
        Ok((pv.flat_grads(&tape, &tape.backward(total)), stats))
    });
    let mut grads = Vec::with_capacity(parts.len());
    let mut stats = Vec::with_capacity(parts.len());
    for p in parts {
        let (g, s) = p?;
        grads.push(g);
        stats.push(s);
    }
    Ok((
        parallel::sum_in_order(&grads),
        parallel::sum_in_order(&stats),
    ))
}

/// A window paired with the seed of its dropout stream.
pub type BatchItem = (Window, u64);

pub fn sample_batch(
    ds: &Dataset,
    k: usize,
    norm: &Normalizer,
    size: usize,
    rng: &mut Rng,
) -> Result<Vec<BatchItem>> {
    (0..size)
        .map(|_| {
            let w = sample_window(ds, k, norm, rng)?;
            Ok((w, rng.next_u64()))
        })
        .collect()
}

/// Lagrange multiplier of the entropy constraint, kept in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub log_multiplier: f64,
}

impl Default for DualState {
    fn default() -> Self {
        DualState {
            log_multiplier: INITIAL_MULTIPLIER.ln(),
        }
    }
}

impl DualState {
    pub fn multiplier(&self) -> f64 {
        self.log_multiplier.exp()
    }

    /// Dual ascent on `β − H`.
    pub fn update(&mut self, beta: f64, entropy: f64, dual_lr: f64) {
        self.log_multiplier = (self.log_multiplier + dual_lr * (beta - entropy))
            .clamp(LOG_MULTIPLIER_MIN, LOG_MULTIPLIER_MAX);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepStats {
    /// Objective actually minimized.
    pub loss: f64,
    /// NLL part (squared error for DT actors).
    pub nll: f64,
    pub entropy: f64,
    /// Multiplier used in this step.
    pub multiplier: f64,
}

/// Gradient of `J + multiplier·(β − H)` over a batch, without updating anything.
pub fn actor_objective_grads(
    actor: &Actor,
    params: &ModelParams,
    batch: &[BatchItem],
    multiplier: Option<(f64, f64)>,
    exec: Exec,
) -> Result<(Vec<f64>, StepStats)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let inv_b = 1.0 / batch.len() as f64;
    let training = actor.cfg.dropout > 0.0;
    let (grad, stats) = accumulate(exec, params, batch, |tape, pv, (w, seed)| {
        let mut r = rng::seeded(*seed);
        let drop = if training { Some(&mut r) } else { None };
        match actor.mode {
            ActorMode::SaFormer => {
                let (nll, out) = actor.nll_tape(tape, pv, w, drop)?;
                let h = actor.entropy_tape(tape, &out);
                // J + m·(β − H) differs from J − m·H by a constant
                let obj = match multiplier {
                    Some((m, _)) if m > 0.0 => {
                        let mh = tape.scale(h, -m);
                        tape.add(nll, mh)?
                    }
                    _ => nll,
                };
                let (nv, hv) = (tape.scalar(nll), tape.scalar(h));
                Ok((tape.scale(obj, inv_b), vec![nv, hv]))
            }
            ActorMode::Dt => {
                let l = actor.dt_loss_tape(tape, pv, w, drop)?;
                let lv = tape.scalar(l);
                Ok((tape.scale(l, inv_b), vec![lv, f64::NAN]))
            }
        }
    })?;
    let nll = stats[0] * inv_b;
    let entropy = stats[1] * inv_b;
    let (mult, loss) = match multiplier {
        Some((m, beta)) => (m, nll + m * (beta - entropy)),
        None => (0.0, nll),
    };
    Ok((
        grad,
        StepStats {
            loss,
            nll,
            entropy,
            multiplier: mult,
        },
    ))
}

fn apply(params: &mut ModelParams, grad: &[f64], adam: &mut AdamState, clip: f64) -> Result<()> {
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    params.set_flat_grads(grad)?;
    if clip > 0.0 {
        clip_grad_norm(params, clip);
    }
    adam.step(params)
}

/// One actor update on the plain likelihood objective.
pub fn actor_step(
    actor: &Actor,
    params: &mut ModelParams,
    adam: &mut AdamState,
    batch: &[BatchItem],
    cfg: &RunConfig,
) -> Result<StepStats> {
    let (g, st) = actor_objective_grads(actor, params, batch, None, cfg.exec)?;
    if !st.loss.is_finite() {
        return Err(Error::NonFinite("actor loss".into()));
    }
    apply(params, &g, adam, cfg.grad_clip)?;
    Ok(st)
}

/// One actor update on `J + multiplier·(β − H)`, followed by dual ascent.
pub fn entropy_constrained_step(
    actor: &Actor,
    params: &mut ModelParams,
    adam: &mut AdamState,
    batch: &[BatchItem],
    dual: &mut DualState,
    beta: f64,
    cfg: &RunConfig,
) -> Result<StepStats> {
    if actor.mode != ActorMode::SaFormer {
        return Err(Error::Mode(
            "the entropy-constrained objective needs a SaFormer-mode actor".into(),
        ));
    }
    let (g, st) = actor_objective_grads(
        actor,
        params,
        batch,
        Some((dual.multiplier(), beta)),
        cfg.exec,
    )?;
    if !st.loss.is_finite() {
        return Err(Error::NonFinite("actor loss".into()));
    }
    apply(params, &g, adam, cfg.grad_clip)?;
    dual.update(beta, st.entropy, cfg.dual_lr);
    Ok(st)
}

pub fn critic_grads(
    critic: &Critic,
    params: &ModelParams,
    batch: &[BatchItem],
    lambda: f64,
    exec: Exec,
) -> Result<(Vec<f64>, f64)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let inv_b = 1.0 / batch.len() as f64;
    let training = critic.cfg.dropout > 0.0;
    let (g, s) = accumulate(exec, params, batch, |tape, pv, (w, seed)| {
        let mut r = rng::seeded(*seed);
        let drop = if training { Some(&mut r) } else { None };
        let l = critic.loss_tape(tape, pv, w, lambda, drop)?;
        let lv = tape.scalar(l);
        Ok((tape.scale(l, inv_b), vec![lv]))
    })?;
    Ok((g, s[0] * inv_b))
}

pub fn critic_step(
    critic: &Critic,
    params: &mut ModelParams,
    adam: &mut AdamState,
    batch: &[BatchItem],
    cfg: &RunConfig,
) -> Result<f64> {
    let (g, loss) = critic_grads(critic, params, batch, cfg.lambda, cfg.exec)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("critic loss".into()));
    }
    apply(params, &g, adam, cfg.grad_clip)?;
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub d: f64,
    pub n_candidates: usize,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub cost_mean: f64,
    pub cost_std: f64,
    pub violation_rate: f64,
    pub episodes: Vec<EpisodeRecord>,
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Runs episodes with seeds `seed_base, seed_base + 1, …` at cost limit `d`.
pub fn evaluate(
    models: &Models,
    d: f64,
    exec_cfg: &ExecConfig,
    episodes: usize,
    seed_base: u64,
    exec: Exec,
) -> Result<EvalSummary> {
    let seeds: Vec<u64> = (0..episodes as u64).map(|i| seed_base + i).collect();
    let records = parallel::map(exec, &seeds, |s| models.run_episode(d, exec_cfg, *s))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let rewards: Vec<f64> = records.iter().map(|r| r.sum_reward).collect();
    let costs: Vec<f64> = records.iter().map(|r| r.sum_cost).collect();
    let (reward_mean, reward_std) = mean_std(&rewards);
    let (cost_mean, cost_std) = mean_std(&costs);
    let violation_rate = if records.is_empty() {
        f64::NAN
    } else {
        costs.iter().filter(|c| **c > d).count() as f64 / records.len() as f64
    };
    Ok(EvalSummary {
        d,
        n_candidates: exec_cfg.n_candidates,
        reward_mean,
        reward_std,
        cost_mean,
        cost_std,
        violation_rate,
        episodes: records,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub eval: EvalSummary,
    pub seed: u64,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str = "epoch,actor_loss,critic_loss,eval_reward_mean,eval_reward_std,eval_cost_mean,eval_cost_std,violation_rate,d,N,seed";

    pub fn csv_row(&self) -> String {
        let e = &self.eval;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.actor_loss,
            self.critic_loss,
            e.reward_mean,
            e.reward_std,
            e.cost_mean,
            e.cost_std,
            e.violation_rate,
            e.d,
            e.n_candidates,
            self.seed
        )
    }
}

/// Where training stopped because a loss or gradient became non-finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub epoch: usize,
    pub iteration: usize,
    pub what: String,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Final models, or the last finite ones if training diverged.
    pub models: Models,
    pub metrics: Vec<EpochMetrics>,
    pub diverged: Option<Divergence>,
}

/// Alternates actor and critic updates on fresh mini-batches and evaluates
/// at `eval_limit` after every epoch. `on_epoch` sees each metrics row as it is produced.
pub fn train_offline(
    ds: &Dataset,
    env: &EnvSpec,
    cfg: &RunConfig,
    eval_limit: f64,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    let mut master = rng::seeded(cfg.seed);
    let mut models = Models::init(ds, env, cfg, &mut master)?;
    let mut data_rng = rng::fork(&mut master);
    let total = (cfg.epochs * cfg.iterations_per_epoch) as u64;
    let mut actor_adam = AdamState::new(cfg.lr, cfg.decay(total));
    let mut critic_adam = AdamState::new(cfg.lr, cfg.decay(total));
    let exec_cfg = ExecConfig::new(cfg.n_candidates, ds.meta.gamma_c);
    let mut metrics = Vec::new();

    for epoch in 0..cfg.epochs {
        let (mut a_sum, mut c_sum) = (0.0, 0.0);
        for it in 0..cfg.iterations_per_epoch {
            let step = (|| -> Result<(f64, f64)> {
                let ab = sample_batch(ds, cfg.k, &models.norm, cfg.batch, &mut data_rng)?;
                let a = actor_step(
                    &models.actor,
                    &mut models.actor_params,
                    &mut actor_adam,
                    &ab,
                    cfg,
                )?
                .loss;
                let cb = sample_batch(ds, cfg.k, &models.norm, cfg.batch, &mut data_rng)?;
                let c = critic_step(
                    &models.critic,
                    &mut models.critic_params,
                    &mut critic_adam,
                    &cb,
                    cfg,
                )?;
                Ok((a, c))
            })();
            match step {
                Ok((a, c)) => {
                    a_sum += a;
                    c_sum += c;
                }
                Err(Error::NonFinite(what)) => {
                    return Ok(TrainOutcome {
                        models,
                        metrics,
                        diverged: Some(Divergence {
                            epoch,
                            iteration: it,
                            what,
                        }),
                    })
                }
                Err(e) => return Err(e),
            }
        }
        let n = cfg.iterations_per_epoch.max(1) as f64;
        let eval = evaluate(
            &models,
            eval_limit,
            &exec_cfg,
            cfg.eval_episodes,
            0,
            cfg.exec,
        )?;
        let row = EpochMetrics {
            epoch,
            actor_loss: a_sum / n,
            critic_loss: c_sum / n,
            eval,
            seed: cfg.seed,
        };
        on_epoch(&row);
        metrics.push(row);
    }
    Ok(TrainOutcome {
        models,
        metrics,
        diverged: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    pub d_target: f64,
    /// Maximum number of online rollouts.
    pub budget: usize,
    pub updates_per_rollout: usize,
    /// Length of the rolling window of evaluation costs used to stop.
    pub rolling_window: usize,
    pub n_candidates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneRow {
    pub rollout: usize,
    pub d: f64,
    pub rollout_reward: f64,
    pub rollout_cost: f64,
    pub eval_cost: f64,
    pub rolling_mean: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub multiplier: f64,
    pub dataset_size: usize,
}

impl FinetuneRow {
    pub const CSV_HEADER: &'static str =
        "rollout,d,rollout_reward,rollout_cost,eval_cost,rolling_mean,actor_loss,critic_loss,entropy,multiplier,dataset_size";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.rollout,
            self.d,
            self.rollout_reward,
            self.rollout_cost,
            self.eval_cost,
            self.rolling_mean,
            self.actor_loss,
            self.critic_loss,
            self.entropy,
            self.multiplier,
            self.dataset_size
        )
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub models: Models,
    pub dataset: Dataset,
    pub rows: Vec<FinetuneRow>,
    /// False when the budget ran out before the rolling evaluation cost met the target.
    pub satisfied: bool,
}

impl FinetuneOutcome {
    pub fn unsatisfied(&self) -> bool {
        !self.satisfied
    }
}

/// Mean action-head entropy of `models`' actor over a fixed sample of
/// dataset windows (dropout off).
pub fn policy_entropy(models: &Models, ds: &Dataset, k: usize, seed: u64) -> Result<f64> {
    let mut r = rng::stream(seed, 2);
    let windows = (0..ENTROPY_PROBE_WINDOWS)
        .map(|_| sample_window(ds, k, &models.norm, &mut r))
        .collect::<Result<Vec<_>>>()?;
    let total: f64 = windows
        .iter()
        .map(|w| models.actor.entropy(&models.actor_params, w))
        .sum::<Result<f64>>()?;
    Ok(total / windows.len() as f64)
}

/// Entropy target for fine-tuning: the configured one, else the offline
/// actor's own entropy, so exploration is kept at the level the dataset
/// taught rather than at a scale-blind `-action_dim`.
pub fn entropy_target(cfg: &RunConfig, models: &Models, ds: &Dataset) -> Result<f64> {
    match cfg.entropy_target {
        Some(b) => Ok(b),
        None => policy_entropy(models, ds, models.actor.cfg.k, cfg.seed),
    }
}

/// Next rollout prompt: attenuated, floored at half the target.
pub fn attenuate(d: f64, alpha: f64, d_target: f64) -> f64 {
    (alpha * d).max(0.5 * d_target)
}

/// Online fine-tuning: attenuated rollouts are relabeled with their actual
/// returns, appended to the dataset, and followed by entropy-constrained
/// actor updates and critic updates.
pub fn finetune_online(
    mut models: Models,
    mut dataset: Dataset,
    cfg: &RunConfig,
    ft: &FinetuneConfig,
    mut on_rollout: impl FnMut(&FinetuneRow),
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    if !(ft.d_target > 0.0) {
        return Err(Error::Config(format!(
            "target cost limit must be positive, got {}",
            ft.d_target
        )));
    }
    if ft.rolling_window == 0 {
        return Err(Error::Config("rolling window must be at least 1".into()));
    }
    if models.actor.mode != ActorMode::SaFormer {
        return Err(Error::Mode(
            "fine-tuning needs a SaFormer-mode actor".into(),
        ));
    }
    let beta = entropy_target(cfg, &models, &dataset)?;
    let mut master = rng::stream(cfg.seed, 1);
    let mut data_rng = rng::fork(&mut master);
    let total = (ft.budget * ft.updates_per_rollout) as u64;
    let mut actor_adam = AdamState::new(cfg.lr, cfg.decay(total));
    let mut critic_adam = AdamState::new(cfg.lr, cfg.decay(total));
    let mut dual = DualState::default();
    let exec_cfg = ExecConfig::new(ft.n_candidates, models.gamma_c);
    let mut d = ft.d_target;
    let mut evals: Vec<f64> = Vec::new();
    let mut rows = Vec::new();

    for i in 0..ft.budget {
        d = attenuate(d, cfg.alpha, ft.d_target);
        let rollout = models.run_episode(d, &exec_cfg, master.next_u64())?;
        let traj = Trajectory::from_rollout(
            rollout.states.clone(),
            rollout.actions(),
            rollout.rewards(),
            torque_cost,
            models.gamma_c,
        )?;
        dataset.push(traj)?;

        let (mut a_sum, mut c_sum, mut h_sum, mut m_sum) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..ft.updates_per_rollout {
            let ab = sample_batch(&dataset, cfg.k, &models.norm, cfg.batch, &mut data_rng)?;
            let st = entropy_constrained_step(
                &models.actor,
                &mut models.actor_params,
                &mut actor_adam,
                &ab,
                &mut dual,
                beta,
                cfg,
            )?;
            let cb = sample_batch(&dataset, cfg.k, &models.norm, cfg.batch, &mut data_rng)?;
            c_sum += critic_step(
                &models.critic,
                &mut models.critic_params,
                &mut critic_adam,
                &cb,
                cfg,
            )?;
            a_sum += st.loss;
            h_sum += st.entropy;
            m_sum += st.multiplier;
        }
        let eval = models.run_episode(ft.d_target, &exec_cfg, master.next_u64())?;
        evals.push(eval.sum_cost);
        let recent = &evals[evals.len().saturating_sub(ft.rolling_window)..];
        let rolling_mean = recent.iter().sum::<f64>() / recent.len() as f64;
        let u = ft.updates_per_rollout.max(1) as f64;
        let row = FinetuneRow {
            rollout: i,
            d,
            rollout_reward: rollout.sum_reward,
            rollout_cost: rollout.sum_cost,
            eval_cost: eval.sum_cost,
            rolling_mean,
            actor_loss: a_sum / u,
            critic_loss: c_sum / u,
            entropy: h_sum / u,
            multiplier: m_sum / u,
            dataset_size: dataset.len(),
        };
        on_rollout(&row);
        rows.push(row);
        if recent.len() == ft.rolling_window && rolling_mean <= ft.d_target {
            return Ok(FinetuneOutcome {
                models,
                dataset,
                rows,
                satisfied: true,
            });
        }
    }
    Ok(FinetuneOutcome {
        models,
        dataset,
        rows,
        satisfied: false,
    })
}

/// Evaluation at `d` with verification switched off.
pub fn unverified(exec_cfg: &ExecConfig) -> ExecConfig {
    ExecConfig {
        verification: Verification::Off,
        ..exec_cfg.clone()
    }
}
