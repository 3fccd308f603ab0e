mod common;

use approx::assert_abs_diff_eq;
use common::{random_window, rng, small_config};
use proptest::prelude::*;
use saformer::backbone::{ModelConfig, Token};
use saformer::config::RunConfig;
use saformer::critic::{critic_loss_from_predictions, hinge, Critic};
use saformer::data::{window_ending_at, Dataset, Normalizer};
use saformer::envs::{generate_behaviour_data, BehaviourPolicy, EnvSpec};
use saformer::numerics::{AdamState, Decay, Tensor};
use saformer::rng::Rng;
use saformer::training::{critic_step, sample_batch};
use saformer::Error;

fn setup(k: usize, seed: u64) -> (Critic, saformer::numerics::ModelParams) {
    let c = Critic::new(small_config(k, 3, 2)).unwrap();
    let p = c.init_params(&mut rng(seed));
    (c, p)
}

#[test]
fn later_actions_do_not_affect_earlier_predictions() {
    let (critic, params) = setup(5, 1);
    let w = random_window(&mut rng(2), 5, 5, 3, 2, 0);
    let base = critic
        .forward(&params, &critic.stream(&w))
        .unwrap()
        .ctg_pred;
    assert_eq!(base.len(), 5);
    for t in 1..5 {
        let mut v = w.clone();
        v.steps[t].action[1] += 0.8;
        v.steps[t].state[0] -= 0.5;
        let out = critic
            .forward(&params, &critic.stream(&v))
            .unwrap()
            .ctg_pred;
        assert_eq!(out[..t], base[..t]);
        assert_ne!(out[t], base[t]);
    }
}

#[test]
fn single_step_window_and_bitwise_repeatability() {
    let (critic, params) = setup(4, 3);
    let w = random_window(&mut rng(4), 4, 1, 3, 2, 9);
    let a = critic.forward(&params, &critic.stream(&w)).unwrap();
    let b = critic.forward(&params, &critic.stream(&w)).unwrap();
    assert_eq!(a.ctg_pred.len(), 1);
    assert_eq!(a, b);
}

#[test]
fn broken_alternation_is_rejected() {
    let (critic, params) = setup(3, 0);
    let w = random_window(&mut rng(1), 3, 3, 3, 2, 0);
    let mut s = critic.stream(&w);
    s.tokens.swap(2, 3);
    assert!(matches!(critic.forward(&params, &s), Err(Error::Stream(_))));
}

#[test]
fn loss_examples() {
    assert_eq!(hinge(&[3.0, 2.0, 2.0, 1.0]), 0.0);
    assert_eq!(
        critic_loss_from_predictions(&[3.0, 2.0, 2.0, 1.0], &[3.0, 2.0, 2.0, 1.0], 0.25),
        0.0
    );
    assert_eq!(
        critic_loss_from_predictions(&[1.0, 2.0], &[1.0, 2.0], 0.25),
        0.25
    );
    assert_eq!(
        critic_loss_from_predictions(&[1.0, 2.0], &[0.0, 0.0], 0.0),
        2.5
    );
}

#[test]
fn model_loss_matches_the_reference_formula() {
    let (critic, params) = setup(6, 5);
    let w = random_window(&mut rng(6), 6, 4, 3, 2, 3);
    let pred = critic
        .forward(&params, &critic.stream(&w))
        .unwrap()
        .ctg_pred;
    let target: Vec<f64> = w.steps.iter().map(|s| s.ctg).collect();
    for lambda in [0.0, 0.25, 3.0] {
        let l = critic.loss(&params, &w, lambda).unwrap();
        assert_abs_diff_eq!(
            l,
            critic_loss_from_predictions(&pred, &target, lambda),
            epsilon = 1e-12
        );
    }
    assert!(matches!(
        critic.loss(&params, &w, -1.0),
        Err(Error::Config(_))
    ));
}

#[test]
fn constant_head_with_increasing_targets_only_pays_mse() {
    let (critic, mut params) = setup(4, 7);
    params.get_mut("head.ctg.w").unwrap().data_mut().fill(0.0);
    *params.get_mut("head.ctg.b").unwrap() = Tensor::new(vec![1, 1], vec![0.5]).unwrap();
    let mut w = random_window(&mut rng(8), 4, 4, 3, 2, 0);
    for (i, s) in w.steps.iter_mut().enumerate() {
        s.ctg = 0.5 + i as f64;
    }
    // predictions are flat, so no hinge; mse = (0 + 1 + 4 + 9) / 4
    assert_abs_diff_eq!(
        critic.loss(&params, &w, 0.25).unwrap(),
        3.5,
        epsilon = 1e-12
    );
}

proptest! {
    #[test]
    fn hinge_is_zero_iff_non_increasing(v in prop::collection::vec(-5.0f64..5.0, 1..12)) {
        let non_increasing = v.windows(2).all(|w| w[1] <= w[0]);
        prop_assert_eq!(hinge(&v) == 0.0, non_increasing);
    }

    #[test]
    fn zero_lambda_is_plain_mse(v in prop::collection::vec(-5.0f64..5.0, 1..12), shift in -2.0f64..2.0) {
        let t: Vec<f64> = v.iter().map(|x| x + shift).collect();
        let mse = v.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / v.len() as f64;
        prop_assert_eq!(critic_loss_from_predictions(&v, &t, 0.0), mse);
    }
}

#[test]
fn incremental_scores_match_the_full_window() {
    let (critic, params) = setup(5, 9);
    let w = random_window(&mut rng(10), 5, 4, 3, 2, 2);
    let full = critic
        .forward(&params, &critic.stream(&w))
        .unwrap()
        .ctg_pred;
    let context: Vec<Token> = w.steps[..3]
        .iter()
        .flat_map(|s| critic.step_tokens(&s.state, &s.action, s.timestep))
        .collect();
    let last = &w.steps[3];
    let cache = critic
        .begin_step(&params, &context, &last.state, last.timestep)
        .unwrap();
    let scores = critic
        .score(
            &params,
            &cache,
            &[last.action.clone(), vec![0.0, 0.0]],
            last.timestep,
        )
        .unwrap();
    assert_abs_diff_eq!(scores[0], full[3], epsilon = 1e-10);
    assert_ne!(scores[0], scores[1]);
}

/// Noise-free proportional controllers: the cost-to-go is a deterministic
/// function of the observed history, so prediction error measures the critic
/// and not the behaviour noise.
fn noiseless_dataset(env: &EnvSpec, n: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let trajectories = (0..n)
        .map(|_| {
            let policy = BehaviourPolicy {
                noise: 0.0,
                ..BehaviourPolicy::sample(&mut r)
            };
            policy.rollout(env, 1.0, &mut r).unwrap()
        })
        .collect();
    let meta = generate_behaviour_data(env, 1, 1.0, seed).unwrap().meta;
    Dataset::new(meta, trajectories).unwrap()
}

/// Trains a small critic and checks held-out accuracy against the spread of
/// the targets.
#[test]
fn trained_critic_tracks_held_out_cost_to_go() {
    let env = EnvSpec::point1d();
    let train = noiseless_dataset(&env, 200, 100);
    let held_out = noiseless_dataset(&env, 40, 200);
    let norm = Normalizer::from_dataset(&train).unwrap();
    let cfg = RunConfig {
        k: 8,
        embed_dim: 32,
        n_blocks: 2,
        dropout: 0.0,
        batch: 32,
        lr: 1e-3,
        ..RunConfig::desk()
    };
    let mc = ModelConfig {
        max_timestep: env.horizon,
        ..cfg.model(env.state_dim(), env.action_dim(), env.horizon)
    };
    let critic = Critic::new(mc).unwrap();
    let mut r: Rng = rng(11);
    let mut params = critic.init_params(&mut r);
    let mut adam = AdamState::new(cfg.lr, Decay::Weight(cfg.weight_decay));
    for _ in 0..CRITIC_ITERATIONS {
        let batch = sample_batch(&train, cfg.k, &norm, cfg.batch, &mut r).unwrap();
        critic_step(&critic, &mut params, &mut adam, &batch, &cfg).unwrap();
    }

    let mut errs = Vec::new();
    for traj in held_out.trajectories() {
        for t in 0..traj.len() {
            let w = window_ending_at(traj, t, cfg.k, &norm);
            let pred = critic
                .forward(&params, &critic.stream(&w))
                .unwrap()
                .ctg_pred;
            let raw = norm.cost_raw(*pred.last().unwrap());
            errs.push((raw - traj.ctg[t]).abs());
        }
    }
    let mae = errs.iter().sum::<f64>() / errs.len() as f64;
    let all: Vec<f64> = train
        .trajectories()
        .iter()
        .flat_map(|t| t.ctg.iter().copied())
        .collect();
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let std = (all.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / all.len() as f64).sqrt();
    println!(
        "held-out MAE {mae:.4} vs CTG std {std:.4} (ratio {:.4})",
        mae / std
    );
    assert!(mae < 0.1 * std, "MAE {mae} not below 10% of CTG std {std}");
}

const CRITIC_ITERATIONS: usize = 2000;
