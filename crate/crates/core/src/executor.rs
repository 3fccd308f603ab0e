//! Policy execution with posterior safety verification.
//!
//! Each step samples `N` RTG candidates from the actor, one action per RTG,
//! scores every action with a cost critic and executes the feasible candidate
//! (`ζ ≤ Ĉ_t`) with the largest RTG. Infeasible rounds are resampled; after
//! the resample budget the lowest-scored candidate seen is executed and the
//! step is flagged `forced_unsafe`.

use std::collections::VecDeque;

use crate::actor::{Actor, ActorMode, GaussianHead};
use crate::backbone::{KvCache, Token};
use crate::critic::Critic;
use crate::data::{quantize, Normalizer};
use crate::envs::{EnvSpec, PointTorqueEnv};
use crate::error::{Error, Result};
use crate::numerics::ModelParams;
use crate::rng::{self, Rng};

/// Resample rounds after the first one before falling back.
pub const DEFAULT_RESAMPLE_ROUNDS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    /// Normalized RTG of each candidate.
    pub rtg: Vec<f64>,
    /// Clipped actions.
    pub actions: Vec<Vec<f64>>,
    /// Critic estimates in raw cost units.
    pub scores: Vec<f64>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.rtg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rtg.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleSignal {
    NoFeasibleCandidate,
}

/// Index of the feasible candidate with the largest RTG, lowest index on ties.
pub fn verify_and_select(
    rtg: &[f64],
    scores: &[f64],
    ctg: f64,
) -> std::result::Result<usize, ResampleSignal> {
    let mut best: Option<usize> = None;
    for (i, (r, z)) in rtg.iter().zip(scores).enumerate() {
        if *z <= ctg && best.is_none_or(|b| *r > rtg[b]) {
            best = Some(i);
        }
    }
    best.ok_or(ResampleSignal::NoFeasibleCandidate)
}

/// Anything that can estimate the remaining cost of candidate actions.
pub trait CostScorer {
    type Prepared;

    /// Work shared by every candidate at the current step.
    fn prepare(
        &self,
        history: &[ContextStep],
        state: &[f64],
        timestep: usize,
    ) -> Result<Self::Prepared>;

    /// Raw-unit CTG estimate for each candidate action.
    fn score(
        &self,
        prep: &Self::Prepared,
        actions: &[Vec<f64>],
        timestep: usize,
    ) -> Result<Vec<f64>>;
}

pub struct CriticScorer<'a> {
    pub critic: &'a Critic,
    pub params: &'a ModelParams,
    pub norm: &'a Normalizer,
}

impl CostScorer for CriticScorer<'_> {
    type Prepared = KvCache;

    fn prepare(&self, history: &[ContextStep], state: &[f64], timestep: usize) -> Result<KvCache> {
        let ctx: Vec<Token> = history
            .iter()
            .flat_map(|s| self.critic.step_tokens(&s.state, &s.action, s.timestep))
            .collect();
        self.critic.begin_step(self.params, &ctx, state, timestep)
    }

    fn score(&self, prep: &KvCache, actions: &[Vec<f64>], timestep: usize) -> Result<Vec<f64>> {
        Ok(self
            .critic
            .score(self.params, prep, actions, timestep)?
            .into_iter()
            .map(|z| self.norm.cost_raw(z))
            .collect())
    }
}

/// Scores every candidate with the same value; useful for tests and ablations.
pub struct ConstantScorer(pub f64);

impl CostScorer for ConstantScorer {
    type Prepared = ();

    fn prepare(&self, _: &[ContextStep], _: &[f64], _: usize) -> Result<()> {
        Ok(())
    }

    fn score(&self, _: &(), actions: &[Vec<f64>], _: usize) -> Result<Vec<f64>> {
        Ok(vec![self.0; actions.len()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verification {
    On,
    /// Sample one RTG and one action and execute it unchecked.
    Off,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecConfig {
    pub n_candidates: usize,
    pub resample_rounds: usize,
    pub verification: Verification,
    pub gamma_c: f64,
    /// Keep the final candidate set of every step in the log.
    pub log_candidates: bool,
    /// Raw target return for DT-mode actors.
    pub dt_target_return: f64,
}

impl ExecConfig {
    pub fn new(n_candidates: usize, gamma_c: f64) -> Self {
        ExecConfig {
            n_candidates,
            resample_rounds: DEFAULT_RESAMPLE_ROUNDS,
            verification: Verification::On,
            gamma_c,
            log_candidates: false,
            dt_target_return: 0.0,
        }
    }
}

/// One executed step as stored in the rolling context (normalized inputs).
#[derive(Debug, Clone, PartialEq)]
pub struct ContextStep {
    pub timestep: usize,
    pub limit: f64,
    pub ctg: f64,
    pub rtg: f64,
    pub state: Vec<f64>,
    pub action: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub timestep: usize,
    /// Remaining budget before the step, raw units.
    pub ctg: f64,
    /// Selected candidate's RTG, normalized.
    pub rtg: f64,
    /// Critic estimate of the executed action, raw units (NaN when unverified).
    pub score: f64,
    pub action: Vec<f64>,
    pub reward: f64,
    pub cost: f64,
    pub rounds: usize,
    pub forced_unsafe: bool,
    pub candidates: Option<CandidateSet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub d: f64,
    pub n_candidates: usize,
    pub sum_reward: f64,
    pub sum_cost: f64,
    /// Steps after which the remaining budget was negative.
    pub violations: usize,
    pub forced_unsafe: usize,
    pub steps: Vec<StepLog>,
    /// Raw state observed before each executed step.
    pub states: Vec<Vec<f64>>,
}

impl EpisodeRecord {
    pub const CSV_HEADER: &'static str = "seed,d,N,sum_reward,sum_cost,violations,forced_unsafe";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.seed,
            self.d,
            self.n_candidates,
            self.sum_reward,
            self.sum_cost,
            self.violations,
            self.forced_unsafe
        )
    }

    pub fn actions(&self) -> Vec<Vec<f64>> {
        self.steps.iter().map(|s| s.action.clone()).collect()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }
}

pub struct Policy<'a> {
    pub actor: &'a Actor,
    pub params: &'a ModelParams,
    pub norm: &'a Normalizer,
}

impl Policy<'_> {
    /// Samples `n` RTGs from the RTG head, then one clipped action per RTG.
    pub fn propose(
        &self,
        cache: &KvCache,
        rtg_head: &GaussianHead,
        state: &[f64],
        n: usize,
        t: usize,
        rng: &mut Rng,
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let rtgs: Vec<f64> = (0..n).map(|_| rtg_head.sample(rng)[0]).collect();
        let heads = self
            .actor
            .action_heads(self.params, cache, &rtgs, state, t)?;
        let actions = heads.iter().map(|h| clip(h.sample(rng))).collect();
        Ok((rtgs, actions))
    }
}

fn clip(a: Vec<f64>) -> Vec<f64> {
    a.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect()
}

/// Runs one episode from `d = Ĉ₀ = D`. The policy's randomness is seeded from `seed`.
pub fn run_episode<S: CostScorer>(
    spec: &EnvSpec,
    policy: &Policy<'_>,
    scorer: &S,
    d: f64,
    cfg: &ExecConfig,
    seed: u64,
) -> Result<EpisodeRecord> {
    if !(d > 0.0) {
        return Err(Error::Config(format!(
            "cost limit must be positive, got {d}"
        )));
    }
    if cfg.n_candidates == 0 {
        return Err(Error::Config("at least one candidate is required".into()));
    }
    let actor = policy.actor;
    let norm = policy.norm;
    let k = actor.cfg.k;
    let mut rng = rng::seeded(seed);
    let mut env = PointTorqueEnv::new(spec.clone());
    let mut state = env.reset();
    let mut history: VecDeque<ContextStep> = VecDeque::with_capacity(k);
    let mut ctg = d;
    let mut dt_rtg = norm.rtg(cfg.dt_target_return);
    let mut discount = 1.0;
    let limit_tok = norm.cost(d);
    let mut rec = EpisodeRecord {
        seed,
        d,
        n_candidates: cfg.n_candidates,
        sum_reward: 0.0,
        sum_cost: 0.0,
        violations: 0,
        forced_unsafe: 0,
        steps: Vec::with_capacity(spec.horizon),
        states: Vec::with_capacity(spec.horizon),
    };

    for t in 0..spec.horizon {
        rec.states.push(state.clone());
        let s_norm = norm.state(&state);
        let ctg_tok = norm.cost(ctg);
        let hist: Vec<ContextStep> = history.iter().cloned().collect();
        let ctx: Vec<Token> = hist
            .iter()
            .flat_map(|h| actor.step_tokens(h.limit, h.ctg, h.rtg, &h.state, &h.action, h.timestep))
            .collect();
        let (cache, rtg_head) = actor.begin_step(policy.params, &ctx, limit_tok, ctg_tok, t)?;

        let (action, rtg, score, rounds, forced, cands) = match (actor.mode, rtg_head) {
            (ActorMode::Dt, _) => {
                let h = actor.action_heads(policy.params, &cache, &[dt_rtg], &s_norm, t)?;
                (clip(h[0].mean.clone()), dt_rtg, f64::NAN, 1, false, None)
            }
            (ActorMode::SaFormer, None) => {
                unreachable!("saformer actors always return an RTG head")
            }
            (ActorMode::SaFormer, Some(head)) => match cfg.verification {
                Verification::Off => {
                    let (r, a) = policy.propose(&cache, &head, &s_norm, 1, t, &mut rng)?;
                    (a[0].clone(), r[0], f64::NAN, 1, false, None)
                }
                Verification::On => {
                    let prep = scorer.prepare(&hist, &s_norm, t)?;
                    let mut fallback: Option<(f64, f64, Vec<f64>)> = None;
                    let mut chosen = None;
                    let mut last = None;
                    let mut rounds = 0;
                    while rounds <= cfg.resample_rounds {
                        rounds += 1;
                        let (rtgs, actions) = policy.propose(
                            &cache,
                            &head,
                            &s_norm,
                            cfg.n_candidates,
                            t,
                            &mut rng,
                        )?;
                        let scores = scorer.score(&prep, &actions, t)?;
                        if scores.iter().any(|z| z.is_nan()) {
                            return Err(Error::NonFinite(format!("critic score at step {t}")));
                        }
                        let set = CandidateSet {
                            rtg: rtgs,
                            actions,
                            scores,
                        };
                        match verify_and_select(&set.rtg, &set.scores, ctg) {
                            Ok(i) => {
                                chosen = Some((set.actions[i].clone(), set.rtg[i], set.scores[i]));
                                last = Some(set);
                                break;
                            }
                            Err(ResampleSignal::NoFeasibleCandidate) => {
                                for i in 0..set.len() {
                                    if fallback.as_ref().is_none_or(|f| set.scores[i] < f.0) {
                                        fallback = Some((
                                            set.scores[i],
                                            set.rtg[i],
                                            set.actions[i].clone(),
                                        ));
                                    }
                                }
                                last = Some(set);
                            }
                        }
                    }
                    let cands = if cfg.log_candidates { last } else { None };
                    match chosen {
                        Some((a, r, z)) => (a, r, z, rounds, false, cands),
                        None => {
                            let (z, r, a) = fallback.expect("at least one round ran");
                            (a, r, z, rounds, true, cands)
                        }
                    }
                }
            },
        };

        let (step, applied) = env.step(&action)?;
        if !step.reward.is_finite()
            || !step.cost.is_finite()
            || step.next_state.iter().any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite(format!("environment output at step {t}")));
        }
        let reward = quantize(step.reward);
        let cost = quantize(discount * step.cost);
        discount *= cfg.gamma_c;

        if history.len() + 1 >= k {
            history.pop_front();
        }
        if k > 1 {
            history.push_back(ContextStep {
                timestep: t,
                limit: limit_tok,
                ctg: ctg_tok,
                rtg,
                state: s_norm,
                action: applied.clone(),
            });
        }
        rec.steps.push(StepLog {
            timestep: t,
            ctg,
            rtg,
            score,
            action: applied,
            reward,
            cost,
            rounds,
            forced_unsafe: forced,
            candidates: cands,
        });
        ctg -= cost;
        dt_rtg -= norm.rtg(reward);
        rec.sum_reward += reward;
        rec.sum_cost += cost;
        if ctg < 0.0 {
            rec.violations += 1;
        }
        if forced {
            rec.forced_unsafe += 1;
        }
        state = step.next_state;
        if step.done {
            break;
        }
    }
    Ok(rec)
}
