//! Versioned JSON checkpoint holding actor, critic and normalization.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::actor::{Actor, ActorMode};
use crate::backbone::ModelConfig;
use crate::critic::Critic;
use crate::data::Normalizer;
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::numerics::ModelParams;

pub const FORMAT: &str = "saformer-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorSection {
    pub mode: ActorMode,
    pub config: ModelConfig,
    pub params: ModelParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticSection {
    pub config: ModelConfig,
    pub params: ModelParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub actor: ActorSection,
    pub critic: CriticSection,
    pub normalizer: Normalizer,
    pub env: EnvSpec,
    pub gamma_c: f64,
}

impl Checkpoint {
    pub fn new(
        actor: ActorSection,
        critic: CriticSection,
        normalizer: Normalizer,
        env: EnvSpec,
        gamma_c: f64,
    ) -> Self {
        Checkpoint {
            format: FORMAT.to_string(),
            version: VERSION,
            actor,
            critic,
            normalizer,
            env,
            gamma_c,
        }
    }

    pub fn actor(&self) -> Result<Actor> {
        Actor::new(self.actor.mode, self.actor.config.clone())
    }

    pub fn critic(&self) -> Result<Critic> {
        Critic::new(self.critic.config.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self)
            .map_err(|e| Error::Config(format!("serializing checkpoint: {e}")))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s).map_err(|e| Error::Parse {
            path: "<checkpoint>".into(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        ck.check_version()?;
        for (name, t) in ck.actor.params.iter().chain(ck.critic.params.iter()) {
            if t.shape().iter().product::<usize>() != t.len() {
                return Err(Error::Config(format!(
                    "checkpoint tensor `{name}` has inconsistent shape"
                )));
            }
        }
        Ok(ck)
    }

    fn check_version(&self) -> Result<()> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint `{}` version {} (expected `{FORMAT}` version {VERSION})",
                self.format, self.version
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s).map_err(|e| match e {
            Error::Parse { line, msg, .. } => Error::Parse {
                path: path.to_path_buf(),
                line,
                msg,
            },
            other => other,
        })
    }
}
