use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use crate::error::{Error, Result};

/// How the ambiguous "learning rate decay" hyper-parameter is applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decay {
    /// Decoupled (AdamW-style) weight decay with this coefficient.
    Weight(f64),
    /// Learning rate falls linearly to zero over this many steps; no weight decay.
    LinearLr { total_steps: u64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub decay: Decay,
    pub betas: (f64, f64),
    pub eps: f64,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(lr: f64, decay: Decay) -> Self {
        AdamState {
            lr,
            decay,
            betas: (0.9, 0.999),
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    fn current_lr(&self) -> f64 {
        match self.decay {
            Decay::Weight(_) => self.lr,
            Decay::LinearLr { total_steps } => {
                let frac = 1.0 - (self.step - 1) as f64 / total_steps.max(1) as f64;
                self.lr * frac.max(0.0)
            }
        }
    }

    /// One Adam update over every parameter; gradients are zeroed afterwards.
    pub fn step(&mut self, params: &mut ModelParams) -> Result<()> {
        for (name, t) in params.iter() {
            if t.grad.is_none() {
                return Err(Error::MissingGradient(name.to_string()));
            }
        }
        self.step += 1;
        let (b1, b2) = self.betas;
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        let lr = self.current_lr();
        let wd = match self.decay {
            Decay::Weight(w) => w,
            Decay::LinearLr { .. } => 0.0,
        };
        for (name, t) in params.iter_mut() {
            let n = t.len();
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            if m.len() != n {
                return Err(Error::shape("adam_step", &[m.len()], &[n]));
            }
            let g = t.grad.take().unwrap();
            let data = t.data_mut();
            for i in 0..n {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                data[i] -= lr * (mhat / (vhat.sqrt() + self.eps) + wd * data[i]);
            }
            t.grad = Some(vec![0.0; n]);
        }
        Ok(())
    }
}

/// Scales every gradient so the global L2 norm is at most `max_norm`; returns the pre-clip norm.
pub fn clip_grad_norm(params: &mut ModelParams, max_norm: f64) -> f64 {
    let norm = params
        .iter()
        .filter_map(|(_, t)| t.grad.as_ref())
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for (_, t) in params.iter_mut() {
            if let Some(g) = &mut t.grad {
                g.iter_mut().for_each(|x| *x *= s);
            }
        }
    }
    norm
}
