use saformer::data::torque_cost;
use saformer::envs::{generate_behaviour_data, BehaviourPolicy, EnvSpec, PointTorqueEnv};
use saformer::rng;
use saformer::training::mean_std;

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, sx) = mean_std(x);
    let (my, sy) = mean_std(y);
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / (x.len() as f64 * sx * sy)
}

/// Frozen from the default 500-episode dataset: CV ≈ 0.33, Pearson ≈ 0.7.
#[test]
fn behaviour_data_is_heterogeneous_and_correlated() {
    for seed in [0, 1, 2] {
        let ds = generate_behaviour_data(&EnvSpec::point1d(), 500, 1.0, seed).unwrap();
        let costs = ds.cost_returns();
        let (m, s) = mean_std(&costs);
        let corr = pearson(&ds.reward_returns(), &costs);
        println!("seed {seed}: cost cv {:.3}, pearson {corr:.3}", s / m);
        assert!(s / m > 0.2);
        assert!(corr > 0.5);
    }
}

#[test]
fn generation_is_seeded() {
    let env = EnvSpec::point1d();
    let a = generate_behaviour_data(&env, 20, 1.0, 9).unwrap();
    let b = generate_behaviour_data(&env, 20, 1.0, 9).unwrap();
    let c = generate_behaviour_data(&env, 20, 1.0, 10).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(generate_behaviour_data(&env, 0, 1.0, 0).is_err());
}

#[test]
fn step_costs_are_non_negative_and_sum_to_the_return() {
    for env in [EnvSpec::point1d(), EnvSpec::point2d()] {
        let ds = generate_behaviour_data(&env, 30, 1.0, 3).unwrap();
        for t in ds.trajectories() {
            assert!(t.costs.iter().all(|c| *c >= 0.0));
            assert_eq!(t.costs.iter().sum::<f64>(), t.cost_return());
            for (a, c) in t.actions.iter().zip(&t.costs) {
                assert_eq!(a.len(), env.action_dim());
                assert!((torque_cost(a) - c).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn higher_gain_costs_more_and_earns_more() {
    let env = EnvSpec::point1d();
    let mut r = rng::seeded(5);
    let mut rows = Vec::new();
    for gain in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let (mut cost, mut reward) = (0.0, 0.0);
        for v_target in [0.3, 0.6, 0.9] {
            let p = BehaviourPolicy {
                gain,
                v_target,
                noise: 0.05,
            };
            for _ in 0..20 {
                let t = p.rollout(&env, 1.0, &mut r).unwrap();
                cost += t.cost_return();
                reward += t.reward_return();
            }
        }
        rows.push((cost, reward));
    }
    for w in rows.windows(2) {
        assert!(w[1].0 > w[0].0, "cost not increasing in gain: {rows:?}");
        assert!(w[1].1 > w[0].1, "reward not increasing in gain: {rows:?}");
    }
}

#[test]
fn two_dimensional_variant_takes_vector_actions() {
    let env = EnvSpec::point2d();
    assert_eq!(env.action_dim(), 2);
    assert_eq!(env.state_dim(), 4);
    let mut e = PointTorqueEnv::new(env);
    e.reset();
    let (step, applied) = e.step(&[0.5, -2.0]).unwrap();
    assert_eq!(applied, vec![0.5, -1.0]);
    assert_eq!(step.cost, 1.5);
}
