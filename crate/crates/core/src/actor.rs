//! Cost-conditioned actor: a causal transformer over `(D, Ĉ, R̂, s, a)` steps
//! with three diagonal Gaussian heads.
//!
//! Read positions per timestep: the CTG head at the `D` token, the RTG head at
//! the `Ĉ` token and the action head at the `s` token.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::backbone::{
    gaussian_readout, gaussian_readout_tape, init_readout, Backbone, DropoutRng, KvCache, Modality,
    ModelConfig, Token, TokenStream,
};
use crate::data::Window;
use crate::error::{Error, Result};
use crate::numerics::{ModelParams, ParamVars, Tape, Var, HALF_LN_2PI_E};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActorMode {
    /// Five tokens per step, NLL on all three heads.
    SaFormer,
    /// Decision-transformer ablation: `(R̂, s, a)` steps, squared error on the action mean.
    Dt,
}

impl ActorMode {
    pub fn layout(self) -> &'static [Modality] {
        match self {
            ActorMode::SaFormer => &[
                Modality::Limit,
                Modality::Ctg,
                Modality::Rtg,
                Modality::State,
                Modality::Action,
            ],
            ActorMode::Dt => &[Modality::Rtg, Modality::State, Modality::Action],
        }
    }

    pub fn tokens_per_step(self) -> usize {
        self.layout().len()
    }

    fn offset(self, m: Modality) -> Option<usize> {
        self.layout().iter().position(|x| *x == m)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActorMode::SaFormer => "saformer",
            ActorMode::Dt => "dt",
        }
    }
}

impl std::str::FromStr for ActorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "saformer" => Ok(ActorMode::SaFormer),
            "dt" => Ok(ActorMode::Dt),
            _ => Err(Error::Config(format!(
                "unknown actor mode `{s}` (expected saformer or dt)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHead {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl GaussianHead {
    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, ls)| {
                let z: f64 = rng.sample(StandardNormal);
                m + ls.exp() * z
            })
            .collect()
    }

    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|l| l + HALF_LN_2PI_E).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().chain(&self.log_std).all(|v| v.is_finite())
    }
}

impl From<(Vec<f64>, Vec<f64>)> for GaussianHead {
    fn from((mean, log_std): (Vec<f64>, Vec<f64>)) -> Self {
        GaussianHead { mean, log_std }
    }
}

/// Head outputs for each valid timestep of a window, oldest first.
/// The CTG and RTG heads are empty in DT mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorOutput {
    pub ctg_head: Vec<GaussianHead>,
    pub rtg_head: Vec<GaussianHead>,
    pub action_head: Vec<GaussianHead>,
}

/// Tape handles of the head outputs, one row per valid timestep.
#[derive(Debug, Clone, Copy)]
pub struct ActorVars {
    pub ctg: Option<(Var, Var)>,
    pub rtg: Option<(Var, Var)>,
    pub action: (Var, Var),
    pub steps: usize,
}

const HEAD_CTG: &str = "head.ctg";
const HEAD_RTG: &str = "head.rtg";
const HEAD_ACTION: &str = "head.action";

#[derive(Debug, Clone)]
pub struct Actor {
    pub mode: ActorMode,
    pub cfg: ModelConfig,
    backbone: Backbone,
}

impl Actor {
    pub fn new(mode: ActorMode, cfg: ModelConfig) -> Result<Self> {
        let mods = mode
            .layout()
            .iter()
            .map(|m| {
                let d = match m {
                    Modality::State => cfg.state_dim,
                    Modality::Action => cfg.action_dim,
                    _ => 1,
                };
                (*m, d)
            })
            .collect();
        let backbone = Backbone::new(cfg.backbone(mode.tokens_per_step(), mods), "backbone")?;
        Ok(Actor {
            mode,
            cfg,
            backbone,
        })
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn init_params(&self, rng: &mut Rng) -> ModelParams {
        let mut p = ModelParams::default();
        self.backbone.init_params(rng, &mut p);
        let e = self.cfg.embed_dim;
        if self.mode == ActorMode::SaFormer {
            init_readout(rng, &mut p, HEAD_CTG, e, 2);
            init_readout(rng, &mut p, HEAD_RTG, e, 2);
        }
        init_readout(rng, &mut p, HEAD_ACTION, e, 2 * self.cfg.action_dim);
        p
    }

    /// Token stream of a window; padded steps become invalid tokens.
    pub fn stream(&self, w: &Window) -> TokenStream {
        let mut tokens = Vec::with_capacity((w.pad + w.steps.len()) * self.mode.tokens_per_step());
        for _ in 0..w.pad {
            for m in self.mode.layout() {
                tokens.push(Token::padding(*m, self.dim(*m)));
            }
        }
        for s in &w.steps {
            for m in self.mode.layout() {
                let value = match m {
                    Modality::Limit => vec![s.limit],
                    Modality::Ctg => vec![s.ctg],
                    Modality::Rtg => vec![s.rtg],
                    Modality::State => s.state.clone(),
                    Modality::Action => s.action.clone(),
                };
                tokens.push(Token::new(*m, value, s.timestep));
            }
        }
        TokenStream { tokens }
    }

    fn dim(&self, m: Modality) -> usize {
        match m {
            Modality::State => self.cfg.state_dim,
            Modality::Action => self.cfg.action_dim,
            _ => 1,
        }
    }

    /// Checks the per-step token layout; returns the start position of each valid step.
    pub fn valid_steps(&self, stream: &TokenStream) -> Result<Vec<usize>> {
        let tps = self.mode.tokens_per_step();
        let layout = self.mode.layout();
        if self.mode == ActorMode::Dt
            && stream
                .tokens
                .iter()
                .any(|t| matches!(t.modality, Modality::Limit | Modality::Ctg))
        {
            return Err(Error::Mode(
                "cost tokens are not accepted by a DT-mode actor".into(),
            ));
        }
        if !stream.len().is_multiple_of(tps) {
            return Err(Error::Stream(format!(
                "stream length {} is not a multiple of {tps} tokens per step",
                stream.len()
            )));
        }
        let mut starts = Vec::new();
        let mut last_t = None;
        for (i, step) in stream.tokens.chunks_exact(tps).enumerate() {
            for (j, (tok, m)) in step.iter().zip(layout).enumerate() {
                if tok.modality != *m {
                    return Err(Error::Stream(format!(
                        "position {}: expected `{}` token, found `{}`",
                        i * tps + j,
                        m.name(),
                        tok.modality.name()
                    )));
                }
                if tok.valid != step[0].valid || (tok.valid && tok.timestep != step[0].timestep) {
                    return Err(Error::Stream(format!(
                        "step {i} mixes validity or timesteps"
                    )));
                }
            }
            if step[0].valid {
                if last_t.is_some_and(|t| step[0].timestep < t) {
                    return Err(Error::Stream(format!(
                        "step {i}: timesteps must be non-decreasing"
                    )));
                }
                last_t = Some(step[0].timestep);
                starts.push(i * tps);
            }
        }
        Ok(starts)
    }

    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        pv: &ParamVars,
        stream: &TokenStream,
        rng: DropoutRng<'_>,
    ) -> Result<ActorVars> {
        let starts = self.valid_steps(stream)?;
        let h = self.backbone.forward(tape, pv, stream, rng)?;
        let rows = |m: Modality| -> Vec<usize> {
            let off = self.mode.offset(m).expect("modality in layout");
            starts.iter().map(|s| s + off).collect()
        };
        let (ctg, rtg) = match self.mode {
            ActorMode::SaFormer => (
                Some(gaussian_readout_tape(
                    tape,
                    pv,
                    HEAD_CTG,
                    h,
                    &rows(Modality::Limit),
                    1,
                )?),
                Some(gaussian_readout_tape(
                    tape,
                    pv,
                    HEAD_RTG,
                    h,
                    &rows(Modality::Ctg),
                    1,
                )?),
            ),
            ActorMode::Dt => (None, None),
        };
        let action = gaussian_readout_tape(
            tape,
            pv,
            HEAD_ACTION,
            h,
            &rows(Modality::State),
            self.cfg.action_dim,
        )?;
        Ok(ActorVars {
            ctg,
            rtg,
            action,
            steps: starts.len(),
        })
    }

    /// Head outputs without recording a tape (dropout off).
    pub fn forward(&self, params: &ModelParams, stream: &TokenStream) -> Result<ActorOutput> {
        let starts = self.valid_steps(stream)?;
        let h = self.backbone.infer(params, stream)?;
        let e = self.cfg.embed_dim;
        let pick = |m: Modality| -> Vec<f64> {
            let off = self.mode.offset(m).expect("modality in layout");
            starts
                .iter()
                .flat_map(|s| h[(s + off) * e..(s + off + 1) * e].iter().copied())
                .collect()
        };
        let heads = |name: &str, m: Modality, dim: usize| -> Result<Vec<GaussianHead>> {
            Ok(gaussian_readout(params, name, &pick(m), e, dim)?
                .into_iter()
                .map(GaussianHead::from)
                .collect())
        };
        let (ctg_head, rtg_head) = match self.mode {
            ActorMode::SaFormer => (
                heads(HEAD_CTG, Modality::Limit, 1)?,
                heads(HEAD_RTG, Modality::Ctg, 1)?,
            ),
            ActorMode::Dt => (Vec::new(), Vec::new()),
        };
        let action_head = heads(HEAD_ACTION, Modality::State, self.cfg.action_dim)?;
        Ok(ActorOutput {
            ctg_head,
            rtg_head,
            action_head,
        })
    }

    fn targets(&self, tape: &mut Tape, w: &Window) -> Result<(Var, Var, Var)> {
        let n = w.steps.len();
        let ctg = tape.constant(n, 1, w.steps.iter().map(|s| s.ctg).collect())?;
        let rtg = tape.constant(n, 1, w.steps.iter().map(|s| s.rtg).collect())?;
        let act = tape.constant(
            n,
            self.cfg.action_dim,
            w.steps
                .iter()
                .flat_map(|s| s.action.iter().copied())
                .collect(),
        )?;
        Ok((ctg, rtg, act))
    }

    /// Joint negative log-likelihood of the window's own CTG, RTG and action
    /// targets, averaged over valid timesteps. Returns the loss and the head handles.
    pub fn nll_tape(
        &self,
        tape: &mut Tape,
        pv: &ParamVars,
        w: &Window,
        rng: DropoutRng<'_>,
    ) -> Result<(Var, ActorVars)> {
        if self.mode != ActorMode::SaFormer {
            return Err(Error::Mode(
                "the NLL objective needs a SaFormer-mode actor".into(),
            ));
        }
        let out = self.forward_tape(tape, pv, &self.stream(w), rng)?;
        let (tc, tr, ta) = self.targets(tape, w)?;
        let (cm, cs) = out.ctg.expect("saformer mode");
        let (rm, rs) = out.rtg.expect("saformer mode");
        let l1 = tape.gaussian_nll(cm, cs, tc)?;
        let l2 = tape.gaussian_nll(rm, rs, tr)?;
        let l3 = tape.gaussian_nll(out.action.0, out.action.1, ta)?;
        let s = tape.add(l1, l2)?;
        let s = tape.add(s, l3)?;
        Ok((tape.scale(s, 1.0 / out.steps as f64), out))
    }

    /// Mean action-head entropy over valid timesteps.
    pub fn entropy_tape(&self, tape: &mut Tape, out: &ActorVars) -> Var {
        let h = tape.gaussian_entropy(out.action.1);
        tape.scale(h, 1.0 / out.steps as f64)
    }

    /// Squared error of the action mean, averaged over every action entry.
    pub fn dt_loss_tape(
        &self,
        tape: &mut Tape,
        pv: &ParamVars,
        w: &Window,
        rng: DropoutRng<'_>,
    ) -> Result<Var> {
        if self.mode != ActorMode::Dt {
            return Err(Error::Mode(
                "the squared-error objective needs a DT-mode actor".into(),
            ));
        }
        let out = self.forward_tape(tape, pv, &self.stream(w), rng)?;
        let (_, _, ta) = self.targets(tape, w)?;
        let d = tape.sub(out.action.0, ta)?;
        let sq = tape.mul(d, d)?;
        Ok(tape.mean(sq))
    }

    pub fn nll(&self, params: &ModelParams, w: &Window) -> Result<f64> {
        let mut tape = Tape::new();
        let pv = tape.params(params);
        let (l, _) = self.nll_tape(&mut tape, &pv, w, None)?;
        Ok(tape.scalar(l))
    }

    pub fn entropy(&self, params: &ModelParams, w: &Window) -> Result<f64> {
        let out = self.forward(params, &self.stream(w))?;
        let n = out.action_head.len() as f64;
        Ok(out
            .action_head
            .iter()
            .map(GaussianHead::entropy)
            .sum::<f64>()
            / n)
    }

    pub fn dt_loss(&self, params: &ModelParams, w: &Window) -> Result<f64> {
        let mut tape = Tape::new();
        let pv = tape.params(params);
        let l = self.dt_loss_tape(&mut tape, &pv, w, None)?;
        Ok(tape.scalar(l))
    }

    // ---- incremental inference used by the executor ---------------------------

    /// Caches `context` (complete steps) followed by the current step's leading
    /// tokens and returns the RTG head at the current step. In DT mode the
    /// current step contributes no tokens and `None` is returned.
    pub fn begin_step(
        &self,
        params: &ModelParams,
        context: &[Token],
        limit: f64,
        ctg: f64,
        timestep: usize,
    ) -> Result<(KvCache, Option<GaussianHead>)> {
        let mut tokens = context.to_vec();
        if self.mode == ActorMode::SaFormer {
            tokens.push(Token::new(Modality::Limit, vec![limit], timestep));
            tokens.push(Token::new(Modality::Ctg, vec![ctg], timestep));
        }
        let stream = TokenStream { tokens };
        let (h, cache) = self.backbone.prefill(params, &stream)?;
        let e = self.cfg.embed_dim;
        let head = match self.mode {
            ActorMode::SaFormer => {
                let last = &h[h.len() - e..];
                Some(
                    gaussian_readout(params, HEAD_RTG, last, e, 1)?
                        .remove(0)
                        .into(),
                )
            }
            ActorMode::Dt => None,
        };
        Ok((cache, head))
    }

    /// Action heads for each candidate RTG, every candidate continuing the same cached prefix.
    pub fn action_heads(
        &self,
        params: &ModelParams,
        cache: &KvCache,
        rtgs: &[f64],
        state: &[f64],
        timestep: usize,
    ) -> Result<Vec<GaussianHead>> {
        let groups: Vec<[Token; 2]> = rtgs
            .iter()
            .map(|r| {
                [
                    Token::new(Modality::Rtg, vec![*r], timestep),
                    Token::new(Modality::State, state.to_vec(), timestep),
                ]
            })
            .collect();
        let refs: Vec<&[Token]> = groups.iter().map(|g| g.as_slice()).collect();
        let hs = self.backbone.extend(params, cache, &refs)?;
        let e = self.cfg.embed_dim;
        let rows: Vec<f64> = hs
            .iter()
            .flat_map(|h| h[e..2 * e].iter().copied())
            .collect();
        Ok(
            gaussian_readout(params, HEAD_ACTION, &rows, e, self.cfg.action_dim)?
                .into_iter()
                .map(GaussianHead::from)
                .collect(),
        )
    }

    /// Tokens of one executed step, in this actor's layout.
    pub fn step_tokens(
        &self,
        limit: f64,
        ctg: f64,
        rtg: f64,
        state: &[f64],
        action: &[f64],
        timestep: usize,
    ) -> Vec<Token> {
        self.mode
            .layout()
            .iter()
            .map(|m| {
                let v = match m {
                    Modality::Limit => vec![limit],
                    Modality::Ctg => vec![ctg],
                    Modality::Rtg => vec![rtg],
                    Modality::State => state.to_vec(),
                    Modality::Action => action.to_vec(),
                };
                Token::new(*m, v, timestep)
            })
            .collect()
    }
}
