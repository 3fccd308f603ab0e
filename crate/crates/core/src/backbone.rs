//! Causal GPT-style transformer shared by the actor and the critic.
//!
//! Tokens carry a modality tag, a value vector, an absolute environment
//! timestep and a validity flag. Each modality has its own linear projection;
//! a learned table indexed by timestep is added on top. Blocks are pre-norm
//! with a GELU MLP of width `4·embed_dim`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::linalg::{self, gemm};
use crate::numerics::{normal_init, AttnMask, ModelParams, ParamVars, Tape, Tensor, Var};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Limit,
    Ctg,
    Rtg,
    State,
    Action,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Limit => "limit",
            Modality::Ctg => "ctg",
            Modality::Rtg => "rtg",
            Modality::State => "state",
            Modality::Action => "action",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub modality: Modality,
    pub value: Vec<f64>,
    pub timestep: usize,
    pub valid: bool,
}

impl Token {
    pub fn new(modality: Modality, value: Vec<f64>, timestep: usize) -> Self {
        Token {
            modality,
            value,
            timestep,
            valid: true,
        }
    }

    pub fn padding(modality: Modality, dim: usize) -> Self {
        Token {
            modality,
            value: vec![0.0; dim],
            timestep: 0,
            valid: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TokenStream {
    pub tokens: Vec<Token>,
}

impl TokenStream {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validity(&self) -> Vec<bool> {
        self.tokens.iter().map(|t| t.valid).collect()
    }

    /// Positions of valid tokens of modality `m`, in order.
    pub fn positions(&self, m: Modality) -> Vec<usize> {
        self.tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.valid && t.modality == m)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub n_blocks: usize,
    pub embed_dim: usize,
    pub n_heads: usize,
    pub context_tokens: usize,
    pub dropout: f64,
    /// Size of the timestep embedding table.
    pub max_timestep: usize,
    /// Input modalities and their value dimensions.
    pub modalities: Vec<(Modality, usize)>,
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 || self.embed_dim == 0 || self.n_heads == 0 {
            return Err(Error::Config(
                "n_blocks, embed_dim and n_heads must be positive".into(),
            ));
        }
        if !self.embed_dim.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "n_heads ({}) must divide embed_dim ({})",
                self.n_heads, self.embed_dim
            )));
        }
        if self.context_tokens == 0 || self.max_timestep == 0 {
            return Err(Error::Config(
                "context_tokens and max_timestep must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn modality_dim(&self, m: Modality) -> Option<usize> {
        self.modalities
            .iter()
            .find(|(k, _)| *k == m)
            .map(|(_, d)| *d)
    }
}

/// Dropout randomness for one training forward pass; `None` means evaluation mode.
pub type DropoutRng<'a> = Option<&'a mut Rng>;

#[derive(Debug, Clone)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    prefix: String,
}

struct BlockNames {
    ln1_g: String,
    ln1_b: String,
    qkv_w: String,
    qkv_b: String,
    proj_w: String,
    proj_b: String,
    ln2_g: String,
    ln2_b: String,
    fc_w: String,
    fc_b: String,
    out_w: String,
    out_b: String,
}

impl Backbone {
    /// Parameters are stored under `"{prefix}.…"`.
    pub fn new(cfg: BackboneConfig, prefix: &str) -> Result<Self> {
        cfg.validate()?;
        Ok(Backbone {
            cfg,
            prefix: prefix.to_string(),
        })
    }

    fn name(&self, rest: &str) -> String {
        format!("{}.{}", self.prefix, rest)
    }

    fn block_names(&self, i: usize) -> BlockNames {
        let n = |s: &str| self.name(&format!("block{i}.{s}"));
        BlockNames {
            ln1_g: n("ln1.g"),
            ln1_b: n("ln1.b"),
            qkv_w: n("attn.qkv.w"),
            qkv_b: n("attn.qkv.b"),
            proj_w: n("attn.proj.w"),
            proj_b: n("attn.proj.b"),
            ln2_g: n("ln2.g"),
            ln2_b: n("ln2.b"),
            fc_w: n("mlp.fc.w"),
            fc_b: n("mlp.fc.b"),
            out_w: n("mlp.out.w"),
            out_b: n("mlp.out.b"),
        }
    }

    /// GPT-2 style initialization: `N(0, 0.02)` weights, zero biases, unit norms.
    pub fn init_params(&self, rng: &mut Rng, params: &mut ModelParams) {
        let e = self.cfg.embed_dim;
        let std = 0.02;
        let resid_std = 0.02 / (2.0 * self.cfg.n_blocks as f64).sqrt();
        for (m, d) in &self.cfg.modalities {
            params.insert(
                self.name(&format!("embed.{}.w", m.name())),
                normal_init(rng, vec![*d, e], std),
            );
            params.insert(
                self.name(&format!("embed.{}.b", m.name())),
                Tensor::zeros(vec![1, e]),
            );
        }
        params.insert(
            self.name("embed.time"),
            normal_init(rng, vec![self.cfg.max_timestep, e], std),
        );
        for i in 0..self.cfg.n_blocks {
            let b = self.block_names(i);
            params.insert(b.ln1_g, Tensor::full(vec![1, e], 1.0));
            params.insert(b.ln1_b, Tensor::zeros(vec![1, e]));
            params.insert(b.qkv_w, normal_init(rng, vec![e, 3 * e], std));
            params.insert(b.qkv_b, Tensor::zeros(vec![1, 3 * e]));
            params.insert(b.proj_w, normal_init(rng, vec![e, e], resid_std));
            params.insert(b.proj_b, Tensor::zeros(vec![1, e]));
            params.insert(b.ln2_g, Tensor::full(vec![1, e], 1.0));
            params.insert(b.ln2_b, Tensor::zeros(vec![1, e]));
            params.insert(b.fc_w, normal_init(rng, vec![e, 4 * e], std));
            params.insert(b.fc_b, Tensor::zeros(vec![1, 4 * e]));
            params.insert(b.out_w, normal_init(rng, vec![4 * e, e], resid_std));
            params.insert(b.out_b, Tensor::zeros(vec![1, e]));
        }
        params.insert(self.name("ln_f.g"), Tensor::full(vec![1, e], 1.0));
        params.insert(self.name("ln_f.b"), Tensor::zeros(vec![1, e]));
    }

    fn check_tokens(&self, tokens: &[Token], offset: usize) -> Result<()> {
        let total = offset + tokens.len();
        if total > self.cfg.context_tokens {
            return Err(Error::ContextOverflow {
                len: total,
                capacity: self.cfg.context_tokens,
            });
        }
        for (i, t) in tokens.iter().enumerate() {
            let dim = self.cfg.modality_dim(t.modality).ok_or_else(|| {
                Error::Stream(format!(
                    "position {}: modality `{}` is not enabled",
                    offset + i,
                    t.modality.name()
                ))
            })?;
            if t.value.len() != dim {
                return Err(Error::Stream(format!(
                    "position {}: `{}` value has dimension {}, expected {}",
                    offset + i,
                    t.modality.name(),
                    t.value.len(),
                    dim
                )));
            }
            if t.valid && t.timestep >= self.cfg.max_timestep {
                return Err(Error::Stream(format!(
                    "position {}: timestep {} exceeds the embedding table ({})",
                    offset + i,
                    t.timestep,
                    self.cfg.max_timestep
                )));
            }
        }
        Ok(())
    }

    /// Modality projection plus timestep embedding; invalid positions are zero rows.
    pub fn embed(&self, tape: &mut Tape, pv: &ParamVars, stream: &TokenStream) -> Result<Var> {
        self.check_tokens(&stream.tokens, 0)?;
        let p = stream.len();
        let time_idx: Vec<Option<usize>> = stream
            .tokens
            .iter()
            .map(|t| t.valid.then_some(t.timestep))
            .collect();
        let mut acc = tape.gather_rows(pv.get(&self.name("embed.time"))?, time_idx)?;
        for (m, d) in &self.cfg.modalities {
            let rows: Vec<usize> = stream.positions(*m);
            if rows.is_empty() {
                continue;
            }
            let mut x = Vec::with_capacity(rows.len() * d);
            for &r in &rows {
                x.extend_from_slice(&stream.tokens[r].value);
            }
            let xv = tape.constant(rows.len(), *d, x)?;
            let w = pv.get(&self.name(&format!("embed.{}.w", m.name())))?;
            let b = pv.get(&self.name(&format!("embed.{}.b", m.name())))?;
            let proj = tape.linear(xv, w, b)?;
            let mut scatter: Vec<Option<usize>> = vec![None; p];
            for (k, &r) in rows.iter().enumerate() {
                scatter[r] = Some(k);
            }
            let placed = tape.gather_rows(proj, scatter)?;
            acc = tape.add(acc, placed)?;
        }
        Ok(acc)
    }

    fn maybe_dropout(&self, tape: &mut Tape, x: Var, rng: &mut DropoutRng<'_>) -> Result<Var> {
        let p = self.cfg.dropout;
        match rng {
            Some(r) if p > 0.0 => {
                let n = tape.value(x).len();
                let keep: Vec<bool> = (0..n).map(|_| r.random::<f64>() >= p).collect();
                tape.dropout(x, &keep, p)
            }
            _ => Ok(x),
        }
    }

    /// Full forward pass; returns the final hidden states `[positions × embed_dim]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        pv: &ParamVars,
        stream: &TokenStream,
        mut rng: DropoutRng<'_>,
    ) -> Result<Var> {
        let e = self.cfg.embed_dim;
        let heads = self.cfg.n_heads;
        let dh = e / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mask = AttnMask::causal(&stream.validity());

        let x = self.embed(tape, pv, stream)?;
        let mut x = self.maybe_dropout(tape, x, &mut rng)?;
        for i in 0..self.cfg.n_blocks {
            let b = self.block_names(i);
            let h = tape.layer_norm(x, pv.get(&b.ln1_g)?, pv.get(&b.ln1_b)?)?;
            let qkv = tape.linear(h, pv.get(&b.qkv_w)?, pv.get(&b.qkv_b)?)?;
            let mut outs = Vec::with_capacity(heads);
            for hd in 0..heads {
                let q = tape.slice_cols(qkv, hd * dh, dh)?;
                let k = tape.slice_cols(qkv, e + hd * dh, dh)?;
                let v = tape.slice_cols(qkv, 2 * e + hd * dh, dh)?;
                let s = tape.matmul_nt(q, k)?;
                let s = tape.scale(s, scale);
                let a = tape.softmax(s, Some(&mask))?;
                outs.push(tape.matmul(a, v)?);
            }
            let o = if heads == 1 {
                outs[0]
            } else {
                tape.concat_cols(&outs)?
            };
            let y = tape.linear(o, pv.get(&b.proj_w)?, pv.get(&b.proj_b)?)?;
            let y = self.maybe_dropout(tape, y, &mut rng)?;
            x = tape.add(x, y)?;

            let h = tape.layer_norm(x, pv.get(&b.ln2_g)?, pv.get(&b.ln2_b)?)?;
            let m = tape.linear(h, pv.get(&b.fc_w)?, pv.get(&b.fc_b)?)?;
            let m = tape.gelu(m);
            let m = tape.linear(m, pv.get(&b.out_w)?, pv.get(&b.out_b)?)?;
            let m = self.maybe_dropout(tape, m, &mut rng)?;
            x = tape.add(x, m)?;
        }
        tape.layer_norm(
            x,
            pv.get(&self.name("ln_f.g"))?,
            pv.get(&self.name("ln_f.b"))?,
        )
    }

    // ---- tape-free inference -------------------------------------------------

    fn embed_rows(&self, params: &ModelParams, tokens: &[Token]) -> Result<Vec<f64>> {
        let e = self.cfg.embed_dim;
        let time = params.get(&self.name("embed.time"))?.data();
        let mut out = vec![0.0; tokens.len() * e];
        for (i, t) in tokens.iter().enumerate() {
            if !t.valid {
                continue;
            }
            let w = params
                .get(&self.name(&format!("embed.{}.w", t.modality.name())))?
                .data();
            let b = params
                .get(&self.name(&format!("embed.{}.b", t.modality.name())))?
                .data();
            let row = &mut out[i * e..(i + 1) * e];
            // same association as the tape path: (time + (x·W + b))
            let mut proj = vec![0.0; e];
            gemm(
                1,
                t.value.len(),
                e,
                &t.value,
                false,
                w,
                false,
                &mut proj,
                0.0,
            );
            for j in 0..e {
                row[j] = time[t.timestep * e + j] + (proj[j] + b[j]);
            }
        }
        Ok(out)
    }

    /// Runs `groups` of new tokens, each appended independently after the
    /// cached prefix. Returns per-group hidden states and, per group, the
    /// cache extended by that group.
    fn run_groups(
        &self,
        params: &ModelParams,
        cache: &KvCache,
        groups: &[&[Token]],
        keep_cache: bool,
    ) -> Result<(Vec<Vec<f64>>, Vec<KvCache>)> {
        let e = self.cfg.embed_dim;
        let heads = self.cfg.n_heads;
        let dh = e / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let prefix_len = cache.len();
        for g in groups {
            self.check_tokens(g, prefix_len)?;
        }
        let offsets: Vec<usize> = groups
            .iter()
            .scan(0, |acc, g| {
                let o = *acc;
                *acc += g.len();
                Some(o)
            })
            .collect();
        let rows: usize = groups.iter().map(|g| g.len()).sum();
        let mut x = Vec::with_capacity(rows * e);
        for g in groups {
            x.extend(self.embed_rows(params, g)?);
        }
        let group_valid: Vec<Vec<bool>> = groups
            .iter()
            .map(|g| g.iter().map(|t| t.valid).collect())
            .collect();
        let mut new_kv: Vec<Vec<(Vec<f64>, Vec<f64>)>> = vec![Vec::new(); groups.len()];

        for blk in 0..self.cfg.n_blocks {
            let b = self.block_names(blk);
            let p = |n: &str| params.get(n).map(|t| t.data());
            let h = linalg::layer_norm(&x, e, p(&b.ln1_g)?, p(&b.ln1_b)?);
            let mut qkv = linalg::matmul(rows, e, 3 * e, &h, p(&b.qkv_w)?);
            linalg::add_row_inplace(&mut qkv, p(&b.qkv_b)?);

            let (ck, cv) = cache.layers_or_empty(blk);
            let mut o = vec![0.0; rows * e];
            let mut scores =
                vec![0.0; prefix_len + groups.iter().map(|g| g.len()).max().unwrap_or(0)];
            for (gi, g) in groups.iter().enumerate() {
                let off = offsets[gi];
                for i in 0..g.len() {
                    let r = off + i;
                    for hd in 0..heads {
                        let q = &qkv[r * 3 * e + hd * dh..r * 3 * e + hd * dh + dh];
                        let n_keys = prefix_len + i + 1;
                        for j in 0..n_keys {
                            let k = if j < prefix_len {
                                &ck[j * e + hd * dh..j * e + hd * dh + dh]
                            } else {
                                let rr = off + (j - prefix_len);
                                &qkv[rr * 3 * e + e + hd * dh..rr * 3 * e + e + hd * dh + dh]
                            };
                            scores[j] = dot(q, k) * scale;
                        }
                        let allowed = |j: usize| {
                            if j < prefix_len {
                                cache.valid[j]
                            } else {
                                group_valid[gi][j - prefix_len]
                            }
                        };
                        linalg::softmax_masked_row(&mut scores[..n_keys], allowed);
                        let out = &mut o[r * e + hd * dh..r * e + hd * dh + dh];
                        for j in 0..n_keys {
                            let w = scores[j];
                            let v = if j < prefix_len {
                                &cv[j * e + hd * dh..j * e + hd * dh + dh]
                            } else {
                                let rr = off + (j - prefix_len);
                                &qkv[rr * 3 * e + 2 * e + hd * dh
                                    ..rr * 3 * e + 2 * e + hd * dh + dh]
                            };
                            for (acc, vv) in out.iter_mut().zip(v) {
                                *acc += w * vv;
                            }
                        }
                    }
                }
                if keep_cache {
                    let mut k_rows = Vec::with_capacity(g.len() * e);
                    let mut v_rows = Vec::with_capacity(g.len() * e);
                    for i in 0..g.len() {
                        let r = off + i;
                        k_rows.extend_from_slice(&qkv[r * 3 * e + e..r * 3 * e + 2 * e]);
                        v_rows.extend_from_slice(&qkv[r * 3 * e + 2 * e..r * 3 * e + 3 * e]);
                    }
                    new_kv[gi].push((k_rows, v_rows));
                }
            }
            let mut y = linalg::matmul(rows, e, e, &o, p(&b.proj_w)?);
            linalg::add_row_inplace(&mut y, p(&b.proj_b)?);
            x.iter_mut().zip(&y).for_each(|(a, b)| *a += b);

            let h = linalg::layer_norm(&x, e, p(&b.ln2_g)?, p(&b.ln2_b)?);
            let mut m = linalg::matmul(rows, e, 4 * e, &h, p(&b.fc_w)?);
            linalg::add_row_inplace(&mut m, p(&b.fc_b)?);
            m.iter_mut().for_each(|v| *v = linalg::gelu(*v));
            let mut m2 = linalg::matmul(rows, 4 * e, e, &m, p(&b.out_w)?);
            linalg::add_row_inplace(&mut m2, p(&b.out_b)?);
            x.iter_mut().zip(&m2).for_each(|(a, b)| *a += b);
        }
        let out = linalg::layer_norm(
            &x,
            e,
            params.get(&self.name("ln_f.g"))?.data(),
            params.get(&self.name("ln_f.b"))?.data(),
        );
        let outputs = groups
            .iter()
            .zip(&offsets)
            .map(|(g, off)| out[off * e..(off + g.len()) * e].to_vec())
            .collect();
        let caches = if keep_cache {
            new_kv
                .into_iter()
                .zip(&group_valid)
                .map(|(layers, valid)| cache.extended(layers, valid))
                .collect()
        } else {
            Vec::new()
        };
        Ok((outputs, caches))
    }

    /// Processes `stream` from scratch; returns hidden states and the key/value cache.
    pub fn prefill(
        &self,
        params: &ModelParams,
        stream: &TokenStream,
    ) -> Result<(Vec<f64>, KvCache)> {
        let empty = KvCache::empty(self.cfg.n_blocks);
        let (mut outs, mut caches) = self.run_groups(params, &empty, &[&stream.tokens], true)?;
        Ok((outs.pop().unwrap(), caches.pop().unwrap()))
    }

    /// Hidden states of each group of tokens appended after `cache`,
    /// all groups evaluated in one batch and independently of each other.
    pub fn extend(
        &self,
        params: &ModelParams,
        cache: &KvCache,
        groups: &[&[Token]],
    ) -> Result<Vec<Vec<f64>>> {
        Ok(self.run_groups(params, cache, groups, false)?.0)
    }

    /// Tape-free forward over a whole stream.
    pub fn infer(&self, params: &ModelParams, stream: &TokenStream) -> Result<Vec<f64>> {
        let empty = KvCache::empty(self.cfg.n_blocks);
        Ok(self
            .run_groups(params, &empty, &[&stream.tokens], false)?
            .0
            .pop()
            .unwrap())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-block keys and values of an already processed prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct KvCache {
    layers: Vec<(Vec<f64>, Vec<f64>)>,
    valid: Vec<bool>,
    n_blocks: usize,
}

impl KvCache {
    pub fn empty(n_blocks: usize) -> Self {
        KvCache {
            layers: Vec::new(),
            valid: Vec::new(),
            n_blocks,
        }
    }

    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    fn layers_or_empty(&self, blk: usize) -> (&[f64], &[f64]) {
        match self.layers.get(blk) {
            Some((k, v)) => (k.as_slice(), v.as_slice()),
            None => (&[], &[]),
        }
    }

    fn extended(&self, new_layers: Vec<(Vec<f64>, Vec<f64>)>, new_valid: &[bool]) -> KvCache {
        let mut layers = Vec::with_capacity(self.n_blocks);
        for (blk, (k, v)) in new_layers.into_iter().enumerate() {
            let (mut ok, mut ov) = self.layers.get(blk).cloned().unwrap_or_default();
            ok.extend(k);
            ov.extend(v);
            layers.push((ok, ov));
        }
        let mut valid = self.valid.clone();
        valid.extend_from_slice(new_valid);
        KvCache {
            layers,
            valid,
            n_blocks: self.n_blocks,
        }
    }
}

/// Size and shape settings shared by the actor and the critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_blocks: usize,
    pub embed_dim: usize,
    pub n_heads: usize,
    /// Context length in environment timesteps.
    pub k: usize,
    pub dropout: f64,
    pub max_timestep: usize,
    pub state_dim: usize,
    pub action_dim: usize,
}

impl ModelConfig {
    pub fn backbone(
        &self,
        tokens_per_step: usize,
        modalities: Vec<(Modality, usize)>,
    ) -> BackboneConfig {
        BackboneConfig {
            n_blocks: self.n_blocks,
            embed_dim: self.embed_dim,
            n_heads: self.n_heads,
            context_tokens: self.k * tokens_per_step,
            dropout: self.dropout,
            max_timestep: self.max_timestep,
            modalities,
        }
    }
}

/// Linear read-out producing `(mean, log_std)` pairs of width `dim` from hidden rows.
pub(crate) fn gaussian_readout(
    params: &ModelParams,
    name: &str,
    hidden: &[f64],
    embed_dim: usize,
    dim: usize,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let rows = hidden.len() / embed_dim;
    let w = params.get(&format!("{name}.w"))?.data();
    let b = params.get(&format!("{name}.b"))?.data();
    let mut out = linalg::matmul(rows, embed_dim, 2 * dim, hidden, w);
    linalg::add_row_inplace(&mut out, b);
    Ok(out
        .chunks_exact(2 * dim)
        .map(|r| {
            let mean = r[..dim].to_vec();
            let log_std = r[dim..]
                .iter()
                .map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX))
                .collect();
            (mean, log_std)
        })
        .collect())
}

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Tape counterpart of [`gaussian_readout`] on the given rows of `hidden`.
pub(crate) fn gaussian_readout_tape(
    tape: &mut Tape,
    pv: &ParamVars,
    name: &str,
    hidden: Var,
    rows: &[usize],
    dim: usize,
) -> Result<(Var, Var)> {
    let idx: Vec<Option<usize>> = rows.iter().map(|&r| Some(r)).collect();
    let h = tape.gather_rows(hidden, idx)?;
    let out = tape.linear(
        h,
        pv.get(&format!("{name}.w"))?,
        pv.get(&format!("{name}.b"))?,
    )?;
    let mean = tape.slice_cols(out, 0, dim)?;
    let ls = tape.slice_cols(out, dim, dim)?;
    let ls = tape.clamp(ls, LOG_STD_MIN, LOG_STD_MAX);
    Ok((mean, ls))
}

pub(crate) fn init_readout(
    rng: &mut Rng,
    params: &mut ModelParams,
    name: &str,
    embed_dim: usize,
    out: usize,
) {
    params.insert(
        format!("{name}.w"),
        normal_init(rng, vec![embed_dim, out], 0.02),
    );
    params.insert(format!("{name}.b"), Tensor::zeros(vec![1, out]));
}
