//! Run settings and the two built-in profiles.

use serde::{Deserialize, Serialize};

use crate::actor::ActorMode;
use crate::backbone::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::Decay;
use crate::parallel::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Small models for minute-scale CPU runs.
    Desk,
    /// Full-size hyper-parameters.
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(Error::Config(format!(
                "unknown profile `{s}` (expected desk or paper)"
            ))),
        }
    }
}

impl Profile {
    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regularizer {
    /// Decoupled weight decay at a constant learning rate.
    WeightDecay,
    /// Linear learning-rate decay to zero over the run, no weight decay.
    LinearLr,
}

impl Regularizer {
    pub fn as_str(self) -> &'static str {
        match self {
            Regularizer::WeightDecay => "weight-decay",
            Regularizer::LinearLr => "linear-lr",
        }
    }
}

impl std::str::FromStr for Regularizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weight-decay" => Ok(Regularizer::WeightDecay),
            "linear-lr" => Ok(Regularizer::LinearLr),
            _ => Err(Error::Config(format!(
                "unknown regularizer `{s}` (expected weight-decay or linear-lr)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub k: usize,
    pub n_candidates: usize,
    pub n_blocks: usize,
    pub embed_dim: usize,
    pub n_heads: usize,
    pub dropout: f64,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub regularizer: Regularizer,
    pub grad_clip: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub gamma_c: f64,
    pub epochs: usize,
    pub iterations_per_epoch: usize,
    pub eval_episodes: usize,
    pub seed: u64,
    /// `None` means the offline actor's own entropy when fine-tuning starts.
    pub entropy_target: Option<f64>,
    pub dual_lr: f64,
    pub mode: ActorMode,
    pub exec: Exec,
}

impl RunConfig {
    pub fn paper() -> Self {
        RunConfig {
            k: 20,
            n_candidates: 128,
            n_blocks: 3,
            embed_dim: 128,
            n_heads: 1,
            dropout: 0.1,
            batch: 128,
            lr: 1e-4,
            weight_decay: 1e-4,
            regularizer: Regularizer::WeightDecay,
            grad_clip: 1.0,
            lambda: 0.25,
            alpha: 0.95,
            gamma_c: 1.0,
            epochs: 10,
            iterations_per_epoch: 5000,
            eval_episodes: 20,
            seed: 0,
            entropy_target: None,
            dual_lr: 1e-3,
            mode: ActorMode::SaFormer,
            exec: Exec::Parallel,
        }
    }

    pub fn desk() -> Self {
        RunConfig {
            k: 10,
            embed_dim: 64,
            batch: 64,
            lr: 1e-3,
            // annealing to zero over the run beats constant-rate weight decay
            // at this scale
            regularizer: Regularizer::LinearLr,
            epochs: 7,
            iterations_per_epoch: 500,
            eval_episodes: 5,
            ..Self::paper()
        }
    }

    pub fn profile(p: Profile) -> Self {
        match p {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k", self.k),
            ("n_candidates", self.n_candidates),
            ("n_blocks", self.n_blocks),
            ("embed_dim", self.embed_dim),
            ("n_heads", self.n_heads),
            ("batch", self.batch),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.lr > 0.0)
            || self.weight_decay < 0.0
            || self.lambda < 0.0
            || !(self.dual_lr >= 0.0)
        {
            return Err(Error::Config(
                "lr must be positive; weight_decay, lambda and dual_lr non-negative".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.gamma_c > 0.0 && self.gamma_c <= 1.0) {
            return Err(Error::Config(format!(
                "gamma_c must lie in (0, 1], got {}",
                self.gamma_c
            )));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::Config(
                "grad_clip must be non-negative (0 disables clipping)".into(),
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

    pub fn model(&self, state_dim: usize, action_dim: usize, max_timestep: usize) -> ModelConfig {
        ModelConfig {
            n_blocks: self.n_blocks,
            embed_dim: self.embed_dim,
            n_heads: self.n_heads,
            k: self.k,
            dropout: self.dropout,
            max_timestep,
            state_dim,
            action_dim,
        }
    }

    pub fn decay(&self, total_steps: u64) -> Decay {
        match self.regularizer {
            Regularizer::WeightDecay => Decay::Weight(self.weight_decay),
            Regularizer::LinearLr => Decay::LinearLr { total_steps },
        }
    }
}
