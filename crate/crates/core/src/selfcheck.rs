//! Finite-difference gradient suites for every differentiable op and for
//! the actor and critic objectives.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::actor::{Actor, ActorMode};
use crate::backbone::ModelConfig;
use crate::critic::Critic;
use crate::data::{Window, WindowStep};
use crate::error::Result;
use crate::numerics::{
    finite_diff_check, AttnMask, GradCheckReport, ModelParams, ParamVars, Tape, Tensor, Var,
};
use crate::rng::{self, Rng};

/// Tolerance for single operations.
pub const OP_TOL: f64 = 1e-6;
/// Tolerance for the full model objectives.
pub const MODEL_TOL: f64 = 1e-4;
/// Central-difference steps. The model objectives use a larger step: some of
/// their gradients are identically zero (a key bias shifts every score of a
/// row equally), so the check there compares rounding noise that shrinks like
/// `ulp(loss) / eps`, while truncation error grows like `eps²`.
pub const OP_EPS: f64 = 1e-5;
pub const MODEL_EPS: f64 = 2e-4;

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub name: &'static str,
    pub tol: f64,
    pub report: GradCheckReport,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.report.passes(self.tol)
    }
}

type Build = fn(&mut Tape, &ParamVars, &mut Rng) -> Result<Var>;

fn randn(rng: &mut Rng, shape: Vec<usize>, scale: f64, shift: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| shift + scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::new(shape, data).expect("shape matches data")
}

/// Weighted sum `Σ w ⊙ x` with fixed pseudo-random weights, so every output
/// entry contributes a distinct gradient.
fn weighted_sum(tape: &mut Tape, x: Var, rng: &mut Rng) -> Result<Var> {
    let (r, c) = tape.shape(x);
    let w: Vec<f64> = (0..r * c).map(|_| rng.random_range(0.5..1.5)).collect();
    let w = tape.constant(r, c, w)?;
    let p = tape.mul(x, w)?;
    Ok(tape.sum(p))
}

fn p(pv: &ParamVars, name: &str) -> Var {
    pv.get(name).expect("parameter registered by the case")
}

/// Parameter name, shape and mean offset.
type ParamSpec = (&'static str, Vec<usize>, f64);

fn op_cases() -> Vec<(&'static str, Vec<ParamSpec>, Build)> {
    // (name, params (name, shape, shift), loss builder)
    vec![
        (
            "matmul",
            vec![("a", vec![3, 4], 0.0), ("b", vec![4, 2], 0.0)],
            |t, pv, r| {
                let y = t.matmul(p(pv, "a"), p(pv, "b"))?;
                weighted_sum(t, y, r)
            },
        ),
        (
            "matmul_nt",
            vec![("a", vec![3, 4], 0.0), ("b", vec![2, 4], 0.0)],
            |t, pv, r| {
                let y = t.matmul_nt(p(pv, "a"), p(pv, "b"))?;
                weighted_sum(t, y, r)
            },
        ),
        (
            "add_sub_mul",
            vec![("a", vec![2, 3], 0.0), ("b", vec![2, 3], 0.0)],
            |t, pv, r| {
                let s = t.add(p(pv, "a"), p(pv, "b"))?;
                let d = t.sub(p(pv, "a"), p(pv, "b"))?;
                let y = t.mul(s, d)?;
                weighted_sum(t, y, r)
            },
        ),
        (
            "add_row_linear",
            vec![
                ("x", vec![3, 4], 0.0),
                ("w", vec![4, 2], 0.0),
                ("b", vec![1, 2], 0.0),
            ],
            |t, pv, r| {
                let y = t.linear(p(pv, "x"), p(pv, "w"), p(pv, "b"))?;
                weighted_sum(t, y, r)
            },
        ),
        ("scale", vec![("x", vec![2, 2], 0.0)], |t, pv, r| {
            let y = t.scale(p(pv, "x"), -1.7);
            weighted_sum(t, y, r)
        }),
        ("gelu", vec![("x", vec![3, 4], 0.0)], |t, pv, r| {
            let y = t.gelu(p(pv, "x"));
            weighted_sum(t, y, r)
        }),
        ("relu", vec![("x", vec![2, 3], 0.0)], |t, pv, r| {
            let y = t.relu(p(pv, "x"));
            weighted_sum(t, y, r)
        }),
        ("clamp", vec![("x", vec![2, 3], 0.0)], |t, pv, r| {
            let y = t.clamp(p(pv, "x"), -5.0, 2.0);
            weighted_sum(t, y, r)
        }),
        (
            "layer_norm",
            vec![
                ("x", vec![3, 4], 0.0),
                ("g", vec![1, 4], 1.0),
                ("b", vec![1, 4], 0.0),
            ],
            |t, pv, r| {
                let y = t.layer_norm(p(pv, "x"), p(pv, "g"), p(pv, "b"))?;
                weighted_sum(t, y, r)
            },
        ),
        (
            "softmax_masked",
            vec![("x", vec![4, 4], 0.0)],
            |t, pv, r| {
                let mask = AttnMask::causal(&[false, true, true, true]);
                let y = t.softmax(p(pv, "x"), Some(&mask))?;
                weighted_sum(t, y, r)
            },
        ),
        (
            "embedding_gather",
            vec![("table", vec![5, 3], 0.0)],
            |t, pv, r| {
                let y = t.gather_rows(p(pv, "table"), vec![Some(4), None, Some(1), Some(4)])?;
                weighted_sum(t, y, r)
            },
        ),
        ("slice_concat", vec![("x", vec![3, 5], 0.0)], |t, pv, r| {
            let a = t.slice_cols(p(pv, "x"), 0, 2)?;
            let b = t.slice_cols(p(pv, "x"), 3, 2)?;
            let y = t.concat_cols(&[b, a])?;
            weighted_sum(t, y, r)
        }),
        ("sum_mean", vec![("x", vec![3, 2], 0.0)], |t, pv, _| {
            let s = t.sum(p(pv, "x"));
            let sq = t.mul(p(pv, "x"), p(pv, "x"))?;
            let m = t.mean(sq);
            t.add(s, m)
        }),
        ("dropout", vec![("x", vec![2, 4], 0.0)], |t, pv, r| {
            let keep: Vec<bool> = (0..8).map(|i| i % 3 != 1).collect();
            let y = t.dropout(p(pv, "x"), &keep, 0.25)?;
            weighted_sum(t, y, r)
        }),
        (
            "gaussian_nll",
            vec![
                ("mean", vec![2, 3], 0.0),
                ("log_std", vec![2, 3], 0.0),
                ("x", vec![2, 3], 0.0),
            ],
            |t, pv, _| t.gaussian_nll(p(pv, "mean"), p(pv, "log_std"), p(pv, "x")),
        ),
        (
            "gaussian_entropy",
            vec![("log_std", vec![1, 3], 0.0)],
            |t, pv, r| {
                let sq = t.mul(p(pv, "log_std"), p(pv, "log_std"))?;
                let h = t.gaussian_entropy(sq);
                let y = t.scale(h, r.random_range(0.5..1.5));
                Ok(y)
            },
        ),
    ]
}

fn check(
    params: &ModelParams,
    eps: f64,
    build: impl Fn(&mut Tape, &ParamVars) -> Result<Var>,
    corrupt: bool,
) -> Result<GradCheckReport> {
    let loss_fn = |ps: &ModelParams| -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let pv = tape.params(ps);
        let l = build(&mut tape, &pv)?;
        let mut g = pv.flat_grads(&tape, &tape.backward(l));
        if corrupt {
            g.iter_mut().for_each(|v| *v *= 1.01);
        }
        Ok((tape.scalar(l), g))
    };
    finite_diff_check(loss_fn, params, eps)
}

/// Randomizes every parameter to `N(0, 0.3²)` (norm gains around 1) so that no
/// gradient entry is vanishingly small.
fn well_conditioned(mut params: ModelParams, rng: &mut Rng) -> ModelParams {
    for (name, t) in params.iter_mut() {
        let shift = if name.ends_with(".g") { 1.0 } else { 0.0 };
        t.data_mut()
            .iter_mut()
            .for_each(|v| *v = shift + 0.3 * rng.sample::<f64, _>(StandardNormal));
    }
    params
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        n_blocks: 1,
        embed_dim: 4,
        n_heads: 2,
        k: 2,
        dropout: 0.0,
        max_timestep: 4,
        state_dim: 2,
        action_dim: 2,
    }
}

fn two_step_window(rng: &mut Rng) -> Window {
    let mut u = || rng.random_range(-1.0..1.0);
    let steps = (0..2)
        .map(|t| WindowStep {
            timestep: t,
            limit: 0.8,
            ctg: 0.6 - 0.3 * t as f64,
            rtg: u(),
            state: vec![u(), u()],
            action: vec![u(), u()],
        })
        .collect();
    Window {
        pad: 0,
        steps,
        state_dim: 2,
        action_dim: 2,
    }
}

/// Names of every case, in run order.
pub fn case_names() -> Vec<&'static str> {
    let mut v: Vec<&'static str> = op_cases().iter().map(|c| c.0).collect();
    v.extend(["actor_nll", "actor_entropy_objective", "critic_loss"]);
    v
}

/// Runs every case. `corrupt` names a case whose analytic gradient is
/// deliberately scaled by 1.01 (used to test that failures are detected).
pub fn run_suite(corrupt: Option<&str>) -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    for (i, (name, spec, build)) in op_cases().into_iter().enumerate() {
        let mut r = rng::stream(7, i as u64);
        let mut params = ModelParams::default();
        for (pname, shape, shift) in spec {
            params.insert(pname, randn(&mut r, shape, 1.0, shift));
        }
        let seed = r.random::<u64>();
        let report = check(
            &params,
            OP_EPS,
            |t, pv| build(t, pv, &mut rng::seeded(seed)),
            corrupt == Some(name),
        )?;
        out.push(CaseResult {
            name,
            tol: OP_TOL,
            report,
        });
    }

    let mut r = rng::stream(7, 1000);
    let actor = Actor::new(ActorMode::SaFormer, tiny_config())?;
    let ap = well_conditioned(actor.init_params(&mut r), &mut r);
    let w = two_step_window(&mut r);
    let report = check(
        &ap,
        MODEL_EPS,
        |t, pv| Ok(actor.nll_tape(t, pv, &w, None)?.0),
        corrupt == Some("actor_nll"),
    )?;
    out.push(CaseResult {
        name: "actor_nll",
        tol: MODEL_TOL,
        report,
    });
    let report = check(
        &ap,
        MODEL_EPS,
        |t, pv| {
            let (nll, o) = actor.nll_tape(t, pv, &w, None)?;
            let h = actor.entropy_tape(t, &o);
            let mh = t.scale(h, -0.7);
            t.add(nll, mh)
        },
        corrupt == Some("actor_entropy_objective"),
    )?;
    out.push(CaseResult {
        name: "actor_entropy_objective",
        tol: MODEL_TOL,
        report,
    });

    let critic = Critic::new(tiny_config())?;
    let cp = well_conditioned(critic.init_params(&mut r), &mut r);
    // targets chosen so the hinge term is active as well
    let mut cw = two_step_window(&mut r);
    cw.steps[0].ctg = -0.4;
    cw.steps[1].ctg = 0.9;
    let report = check(
        &cp,
        MODEL_EPS,
        |t, pv| critic.loss_tape(t, pv, &cw, 0.25, None),
        corrupt == Some("critic_loss"),
    )?;
    out.push(CaseResult {
        name: "critic_loss",
        tol: MODEL_TOL,
        report,
    });
    Ok(out)
}
