//! Transformer cost critic over `(s, a)` steps, predicting the cost-to-go at
//! each action token.

use crate::backbone::{Backbone, DropoutRng, KvCache, Modality, ModelConfig, Token, TokenStream};
use crate::data::Window;
use crate::error::{Error, Result};
use crate::numerics::{linalg, normal_init, ModelParams, ParamVars, Tape, Tensor, Var};
use crate::rng::Rng;

const HEAD: &str = "head.ctg";

#[derive(Debug, Clone, PartialEq)]
pub struct CriticOutput {
    /// One prediction per valid timestep, in normalized cost units.
    pub ctg_pred: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Critic {
    pub cfg: ModelConfig,
    backbone: Backbone,
}

/// MSE over timesteps plus `lambda` times the summed positive increments
/// between consecutive predictions.
pub fn critic_loss_from_predictions(pred: &[f64], target: &[f64], lambda: f64) -> f64 {
    let n = pred.len() as f64;
    let mse = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n;
    mse + lambda * hinge(pred)
}

/// `Σ max(0, ζ[t] − ζ[t−1])`: zero iff the sequence is non-increasing.
pub fn hinge(pred: &[f64]) -> f64 {
    pred.windows(2).map(|w| (w[1] - w[0]).max(0.0)).sum()
}

impl Critic {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        let mods = vec![
            (Modality::State, cfg.state_dim),
            (Modality::Action, cfg.action_dim),
        ];
        let backbone = Backbone::new(cfg.backbone(2, mods), "backbone")?;
        Ok(Critic { cfg, backbone })
    }

    pub fn init_params(&self, rng: &mut Rng) -> ModelParams {
        let mut p = ModelParams::default();
        self.backbone.init_params(rng, &mut p);
        p.insert(
            format!("{HEAD}.w"),
            normal_init(rng, vec![self.cfg.embed_dim, 1], 0.02),
        );
        p.insert(format!("{HEAD}.b"), Tensor::zeros(vec![1, 1]));
        p
    }

    pub fn stream(&self, w: &Window) -> TokenStream {
        let mut tokens = Vec::with_capacity(2 * (w.pad + w.steps.len()));
        for _ in 0..w.pad {
            tokens.push(Token::padding(Modality::State, self.cfg.state_dim));
            tokens.push(Token::padding(Modality::Action, self.cfg.action_dim));
        }
        for s in &w.steps {
            tokens.push(Token::new(Modality::State, s.state.clone(), s.timestep));
            tokens.push(Token::new(Modality::Action, s.action.clone(), s.timestep));
        }
        TokenStream { tokens }
    }

    /// Positions of the action tokens of valid steps.
    pub fn read_positions(&self, stream: &TokenStream) -> Result<Vec<usize>> {
        if !stream.len().is_multiple_of(2) {
            return Err(Error::Stream(format!(
                "critic stream has odd length {}",
                stream.len()
            )));
        }
        let mut out = Vec::new();
        for (i, pair) in stream.tokens.chunks_exact(2).enumerate() {
            if pair[0].modality != Modality::State || pair[1].modality != Modality::Action {
                return Err(Error::Stream(format!(
                    "step {i}: critic tokens must alternate state, action (found `{}`, `{}`)",
                    pair[0].modality.name(),
                    pair[1].modality.name()
                )));
            }
            if pair[0].valid != pair[1].valid
                || (pair[0].valid && pair[0].timestep != pair[1].timestep)
            {
                return Err(Error::Stream(format!(
                    "step {i} mixes validity or timesteps"
                )));
            }
            if pair[1].valid {
                out.push(2 * i + 1);
            }
        }
        Ok(out)
    }

    fn readout(&self, params: &ModelParams, rows: &[f64]) -> Result<Vec<f64>> {
        let e = self.cfg.embed_dim;
        let w = params.get(&format!("{HEAD}.w"))?.data();
        let b = params.get(&format!("{HEAD}.b"))?.data();
        let mut out = linalg::matmul(rows.len() / e, e, 1, rows, w);
        linalg::add_row_inplace(&mut out, b);
        Ok(out)
    }

    /// Predictions `[valid steps × 1]` on the tape.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        pv: &ParamVars,
        stream: &TokenStream,
        rng: DropoutRng<'_>,
    ) -> Result<Var> {
        let pos = self.read_positions(stream)?;
        let h = self.backbone.forward(tape, pv, stream, rng)?;
        let idx: Vec<Option<usize>> = pos.into_iter().map(Some).collect();
        let h = tape.gather_rows(h, idx)?;
        tape.linear(
            h,
            pv.get(&format!("{HEAD}.w"))?,
            pv.get(&format!("{HEAD}.b"))?,
        )
    }

    pub fn forward(&self, params: &ModelParams, stream: &TokenStream) -> Result<CriticOutput> {
        let pos = self.read_positions(stream)?;
        let h = self.backbone.infer(params, stream)?;
        let e = self.cfg.embed_dim;
        let rows: Vec<f64> = pos
            .iter()
            .flat_map(|p| h[p * e..(p + 1) * e].iter().copied())
            .collect();
        Ok(CriticOutput {
            ctg_pred: self.readout(params, &rows)?,
        })
    }

    /// Loss on the window's own (normalized) CTG targets.
    pub fn loss_tape(
        &self,
        tape: &mut Tape,
        pv: &ParamVars,
        w: &Window,
        lambda: f64,
        rng: DropoutRng<'_>,
    ) -> Result<Var> {
        if lambda < 0.0 {
            return Err(Error::Config(format!(
                "hinge weight must be non-negative, got {lambda}"
            )));
        }
        let pred = self.forward_tape(tape, pv, &self.stream(w), rng)?;
        let n = w.steps.len();
        let target = tape.constant(n, 1, w.steps.iter().map(|s| s.ctg).collect())?;
        let d = tape.sub(pred, target)?;
        let sq = tape.mul(d, d)?;
        let mse = tape.mean(sq);
        if n < 2 || lambda == 0.0 {
            return Ok(mse);
        }
        let later = tape.gather_rows(pred, (1..n).map(Some).collect::<Vec<_>>())?;
        let earlier = tape.gather_rows(pred, (0..n - 1).map(Some).collect::<Vec<_>>())?;
        let inc = tape.sub(later, earlier)?;
        let inc = tape.relu(inc);
        let h = tape.sum(inc);
        let h = tape.scale(h, lambda);
        tape.add(mse, h)
    }

    pub fn loss(&self, params: &ModelParams, w: &Window, lambda: f64) -> Result<f64> {
        let mut tape = Tape::new();
        let pv = tape.params(params);
        let l = self.loss_tape(&mut tape, &pv, w, lambda, None)?;
        Ok(tape.scalar(l))
    }

    // ---- incremental inference used by the executor ---------------------------

    /// Caches the `(s, a)` context followed by the current state.
    pub fn begin_step(
        &self,
        params: &ModelParams,
        context: &[Token],
        state: &[f64],
        timestep: usize,
    ) -> Result<KvCache> {
        let mut tokens = context.to_vec();
        tokens.push(Token::new(Modality::State, state.to_vec(), timestep));
        Ok(self.backbone.prefill(params, &TokenStream { tokens })?.1)
    }

    /// Normalized CTG prediction for each candidate action appended to the cached prefix.
    pub fn score(
        &self,
        params: &ModelParams,
        cache: &KvCache,
        actions: &[Vec<f64>],
        timestep: usize,
    ) -> Result<Vec<f64>> {
        let groups: Vec<[Token; 1]> = actions
            .iter()
            .map(|a| [Token::new(Modality::Action, a.clone(), timestep)])
            .collect();
        let refs: Vec<&[Token]> = groups.iter().map(|g| g.as_slice()).collect();
        let hs = self.backbone.extend(params, cache, &refs)?;
        let rows: Vec<f64> = hs.concat();
        self.readout(params, &rows)
    }

    pub fn step_tokens(&self, state: &[f64], action: &[f64], timestep: usize) -> [Token; 2] {
        [
            Token::new(Modality::State, state.to_vec(), timestep),
            Token::new(Modality::Action, action.to_vec(), timestep),
        ]
    }
}
