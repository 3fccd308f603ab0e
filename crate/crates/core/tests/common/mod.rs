#![allow(dead_code)]

use rand::Rng as _;
use saformer::backbone::ModelConfig;
use saformer::data::{Window, WindowStep};
use saformer::rng::{self, Rng};

pub fn small_config(k: usize, state_dim: usize, action_dim: usize) -> ModelConfig {
    ModelConfig {
        n_blocks: 2,
        embed_dim: 8,
        n_heads: 2,
        k,
        dropout: 0.0,
        max_timestep: 64,
        state_dim,
        action_dim,
    }
}

pub fn random_window(
    rng: &mut Rng,
    k: usize,
    valid: usize,
    state_dim: usize,
    action_dim: usize,
    t0: usize,
) -> Window {
    let u = |rng: &mut Rng| rng.random_range(-1.0..1.0);
    let steps = (0..valid)
        .map(|i| WindowStep {
            timestep: t0 + i,
            limit: 0.5,
            ctg: u(rng),
            rtg: u(rng),
            state: (0..state_dim).map(|_| u(rng)).collect(),
            action: (0..action_dim).map(|_| u(rng)).collect(),
        })
        .collect();
    Window {
        pad: k - valid,
        steps,
        state_dim,
        action_dim,
    }
}

pub fn rng(seed: u64) -> Rng {
    rng::seeded(seed)
}
