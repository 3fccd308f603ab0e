use std::fs;
use std::path::{Path, PathBuf};

use saformer::checkpoint::Checkpoint;
use saformer::data::{percentile_limit, relabel, torque_cost, Dataset};
use saformer::envs::{generate_behaviour_data, EnvSpec};
use saformer::executor::{EpisodeRecord, ExecConfig, Verification};
use saformer::selfcheck;
use saformer::training::{
    entropy_target, evaluate, finetune_online, mean_std, train_offline, EpochMetrics, EvalSummary,
    FinetuneConfig, FinetuneRow, Models,
};

use crate::echo::{output_path, Echo};
use crate::{
    ArchArgs, EvalArgs, ExecArgs, Failure, FinetuneArgs, GenDataArgs, GradcheckArgs, OptimArgs,
    StatsArgs, SweepArgs, TrainArgs, Verify,
};

const PRINTED_PERCENTILES: [f64; 4] = [10.0, 20.0, 30.0, 50.0];

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{}{suffix}", path.display()))
}

fn percent(p: f64) -> Result<f64, Failure> {
    if !(p > 0.0 && p <= 100.0) {
        return Err(Failure::usage(format!(
            "percentile must lie in (0, 100], got {p}"
        )));
    }
    Ok(p / 100.0)
}

fn load_models(path: &Path) -> Result<Models, Failure> {
    Ok(Models::from_checkpoint(&Checkpoint::load(path)?)?)
}

fn print_percentiles(ds: &Dataset) -> Result<(), Failure> {
    println!("cost-return percentiles ({} trajectories):", ds.len());
    for p in PRINTED_PERCENTILES {
        println!("  {p:>4}%  {}", percentile_limit(ds, p / 100.0)?);
    }
    Ok(())
}

fn exec_config(n: usize, gamma_c: f64, run: &ExecArgs) -> ExecConfig {
    ExecConfig {
        resample_rounds: run.resample_rounds,
        verification: match run.verify {
            Verify::On => Verification::On,
            Verify::Off => Verification::Off,
        },
        ..ExecConfig::new(n, gamma_c)
    }
}

fn summary_line(e: &EvalSummary) -> String {
    format!(
        "d={} N={}: reward {:.3} ± {:.3}, cost {:.3} ± {:.3}, violation rate {:.3}",
        e.d, e.n_candidates, e.reward_mean, e.reward_std, e.cost_mean, e.cost_std, e.violation_rate
    )
}

pub fn gen_data(a: GenDataArgs) -> Result<(), Failure> {
    if a.episodes == 0 {
        return Err(Failure::usage("--episodes must be at least 1"));
    }
    let env = EnvSpec::by_name(&a.env)?;
    let out = output_path(&a.out)?;
    let ds = generate_behaviour_data(&env, a.episodes, a.gamma_c, a.seed)?;
    ds.save(&out)?;
    let mut e = Echo::new("gen-data");
    e.set("env", &a.env)
        .set("episodes", a.episodes)
        .set("seed", a.seed)
        .set("gamma-c", a.gamma_c)
        .path("out", &out);
    e.write_beside(&out)?;
    println!("wrote {}", out.display());
    print_percentiles(&ds)
}

/// Pearson correlation; NaN when either side is constant.
fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, sx) = mean_std(x);
    let (my, sy) = mean_std(y);
    let cov = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / x.len() as f64;
    cov / (sx * sy)
}

pub fn stats(a: StatsArgs) -> Result<(), Failure> {
    let ds = Dataset::load(&a.data)?;
    let out = output_path(&a.out)?;
    let rewards = ds.reward_returns();
    let costs = ds.cost_returns();
    let mut csv = String::from("trajectory,reward_return,cost_return\n");
    for (i, (r, c)) in rewards.iter().zip(&costs).enumerate() {
        csv.push_str(&format!("{i},{r},{c}\n"));
    }
    write(&out, &csv)?;
    let mut e = Echo::new("stats");
    e.path("data", &a.data).path("out", &out);
    e.write_beside(&out)?;

    let (cm, cs) = mean_std(&costs);
    let (rm, rs) = mean_std(&rewards);
    println!("wrote {}", out.display());
    println!("steps {}", ds.total_steps());
    println!("reward return {rm:.4} ± {rs:.4}");
    println!("cost return   {cm:.4} ± {cs:.4} (cv {:.4})", cs / cm);
    println!("pearson(reward, cost) {:.4}", pearson(&rewards, &costs));
    print_percentiles(&ds)
}

pub fn train(a: TrainArgs) -> Result<(), Failure> {
    let ds = Dataset::load(&a.data)?;
    let env = EnvSpec::by_name(&ds.meta.env)?;
    let mut cfg = a.optim.config();
    a.arch.apply(&mut cfg);
    cfg.validate()?;
    let limit = percentile_limit(&ds, percent(a.eval_percentile)?)?;
    let out = output_path(&a.out)?;
    let metrics_path = match &a.metrics {
        Some(p) => output_path(p)?,
        None => sibling(&out, ".metrics.csv"),
    };

    let mut e = Echo::new("train");
    e.path("data", &a.data);
    ArchArgs::echo(&cfg, &mut e);
    a.optim.echo(&cfg, None, &mut e);
    e.set("eval-percentile", a.eval_percentile)
        .path("out", &out)
        .path("metrics", &metrics_path);
    e.write_beside(&out)?;

    eprintln!(
        "training on {} trajectories; per-epoch evaluation at d={limit}",
        ds.len()
    );
    let outcome = train_offline(&ds, &env, &cfg, limit, |m| {
        eprintln!(
            "epoch {}: actor {:.4} critic {:.5} | {}",
            m.epoch,
            m.actor_loss,
            m.critic_loss,
            summary_line(&m.eval)
        )
    })?;
    let mut csv = format!("{}\n", EpochMetrics::CSV_HEADER);
    for m in &outcome.metrics {
        csv.push_str(&m.csv_row());
        csv.push('\n');
    }
    write(&metrics_path, &csv)?;
    outcome.models.checkpoint().save(&out)?;
    println!("wrote {} and {}", out.display(), metrics_path.display());
    match outcome.diverged {
        Some(d) => Err(Failure::check(format!(
            "training diverged at epoch {} iteration {} ({}); the last finite models were saved",
            d.epoch, d.iteration, d.what
        ))),
        None => Ok(()),
    }
}

fn episodes_csv(summary: &EvalSummary) -> String {
    let mut csv = format!("{}\n", EpisodeRecord::CSV_HEADER);
    for r in &summary.episodes {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    csv
}

pub fn eval(a: EvalArgs) -> Result<(), Failure> {
    let models = load_models(&a.ckpt)?;
    let d = match (a.limit, a.percentile, &a.data) {
        (Some(d), _, _) => d,
        (None, Some(p), Some(data)) => percentile_limit(&Dataset::load(data)?, percent(p)?)?,
        _ => {
            return Err(Failure::usage(
                "give --limit, or --percentile together with --data",
            ))
        }
    };
    let out = output_path(&a.out)?;
    let ec = exec_config(a.n_candidates, models.gamma_c, &a.run);
    let summary = evaluate(&models, d, &ec, a.run.episodes, a.run.seed, a.run.exec)?;
    write(&out, &episodes_csv(&summary))?;

    let mut e = Echo::new("eval");
    e.path("ckpt", &a.ckpt)
        .set("limit", d)
        .set("n-candidates", a.n_candidates);
    a.run.echo(&mut e);
    e.path("out", &out);
    e.write_beside(&out)?;
    println!("{}", summary_line(&summary));
    Ok(())
}

/// The dataset's trajectories with costs relabelled under `gamma_c`.
fn with_discount(ds: Dataset, gamma_c: f64) -> Result<Dataset, Failure> {
    if ds.meta.gamma_c == gamma_c {
        return Ok(ds);
    }
    let trajs = ds
        .trajectories()
        .iter()
        .map(|t| relabel(t, torque_cost, gamma_c))
        .collect::<Result<Vec<_>, _>>()?;
    let meta = saformer::data::DatasetMeta { gamma_c, ..ds.meta };
    Ok(Dataset::new(meta, trajs)?)
}

pub fn sweep(a: SweepArgs) -> Result<(), Failure> {
    let models = load_models(&a.ckpt)?;
    let gamma_c = a.gamma_c.unwrap_or(models.gamma_c);
    let ds = with_discount(Dataset::load(&a.data)?, gamma_c)?;
    let out = output_path(&a.out)?;
    if a.percentiles.is_empty() || a.n_candidates.is_empty() {
        return Err(Failure::usage(
            "--percentiles and --n-candidates need at least one value",
        ));
    }

    let mut csv = String::from(
        "percentile,d,N,verify,reward_mean,reward_std,cost_mean,cost_std,violation_rate,forced_unsafe_steps\n",
    );
    for &n in &a.n_candidates {
        let ec = exec_config(n, gamma_c, &a.run);
        for &p in &a.percentiles {
            let d = percentile_limit(&ds, percent(p)?)?;
            let s = evaluate(&models, d, &ec, a.run.episodes, a.run.seed, a.run.exec)?;
            let forced: usize = s.episodes.iter().map(|r| r.forced_unsafe).sum();
            println!("p{p}: {}", summary_line(&s));
            csv.push_str(&format!(
                "{p},{d},{n},{},{},{},{},{},{},{forced}\n",
                a.run.verify.as_str(),
                s.reward_mean,
                s.reward_std,
                s.cost_mean,
                s.cost_std,
                s.violation_rate
            ));
        }
    }
    write(&out, &csv)?;

    let join = |v: Vec<String>| v.join(",");
    let mut e = Echo::new("sweep");
    e.path("data", &a.data)
        .path("ckpt", &a.ckpt)
        .set(
            "percentiles",
            join(a.percentiles.iter().map(f64::to_string).collect()),
        )
        .set("gamma-c", gamma_c)
        .set(
            "n-candidates",
            join(a.n_candidates.iter().map(usize::to_string).collect()),
        );
    a.run.echo(&mut e);
    e.path("out", &out);
    e.write_beside(&out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn finetune_config(optim: &OptimArgs, models: &Models) -> saformer::config::RunConfig {
    let mut cfg = optim.config();
    // the architecture is fixed by the checkpoint
    let m = &models.actor.cfg;
    cfg.k = m.k;
    cfg.embed_dim = m.embed_dim;
    cfg.n_blocks = m.n_blocks;
    cfg.n_heads = m.n_heads;
    cfg.dropout = m.dropout;
    cfg.mode = models.actor.mode;
    cfg
}

pub fn finetune(a: FinetuneArgs) -> Result<(), Failure> {
    let ds = Dataset::load(&a.data)?;
    let models = load_models(&a.ckpt)?;
    let mut cfg = finetune_config(&a.optim, &models);
    cfg.validate()?;
    let d_target = match a.target {
        Some(t) => t,
        None => {
            let min = ds.cost_returns().into_iter().fold(f64::INFINITY, f64::min);
            (1.0 - a.below_min) * min
        }
    };
    let ft = FinetuneConfig {
        d_target,
        budget: a.budget,
        updates_per_rollout: a.updates_per_rollout,
        rolling_window: a.rolling_window,
        n_candidates: a.n_candidates,
    };
    let out = output_path(&a.out)?;
    let log_path = sibling(&out, ".rollouts.csv");
    let summary_path = sibling(&out, ".summary.csv");

    let beta = entropy_target(&cfg, &models, &ds)?;
    cfg.entropy_target = Some(beta);

    let mut e = Echo::new("finetune");
    e.path("data", &a.data).path("ckpt", &a.ckpt);
    a.optim.echo(&cfg, Some(beta), &mut e);
    e.set("target", d_target)
        .set("budget", a.budget)
        .set("updates-per-rollout", a.updates_per_rollout)
        .set("rolling-window", a.rolling_window)
        .set("n-candidates", a.n_candidates)
        .set("eval-episodes", a.eval_episodes)
        .path("out", &out);
    e.write_beside(&out)?;

    let ec = ExecConfig::new(a.n_candidates, models.gamma_c);
    let before = evaluate(&models, d_target, &ec, a.eval_episodes, cfg.seed, cfg.exec)?;
    eprintln!("offline  {}", summary_line(&before));
    let outcome = finetune_online(models, ds, &cfg, &ft, |r| {
        eprintln!(
            "rollout {}: d={:.4} cost {:.4} eval {:.4} rolling {:.4}",
            r.rollout, r.d, r.rollout_cost, r.eval_cost, r.rolling_mean
        )
    })?;
    let after = evaluate(
        &outcome.models,
        d_target,
        &ec,
        a.eval_episodes,
        cfg.seed,
        cfg.exec,
    )?;
    eprintln!("finetuned {}", summary_line(&after));

    let mut log = format!("{}\n", FinetuneRow::CSV_HEADER);
    for r in &outcome.rows {
        log.push_str(&r.csv_row());
        log.push('\n');
    }
    write(&log_path, &log)?;
    let mut summary = String::from(
        "stage,d,reward_mean,reward_std,cost_mean,cost_std,violation_rate,rollouts,satisfied\n",
    );
    for (stage, s) in [("offline", &before), ("finetuned", &after)] {
        summary.push_str(&format!(
            "{stage},{},{},{},{},{},{},{},{}\n",
            s.d,
            s.reward_mean,
            s.reward_std,
            s.cost_mean,
            s.cost_std,
            s.violation_rate,
            outcome.rows.len(),
            outcome.satisfied
        ));
    }
    write(&summary_path, &summary)?;
    outcome.models.checkpoint().save(&out)?;
    println!(
        "target {d_target}: offline cost {:.4} -> finetuned {:.4} after {} rollouts ({})",
        before.cost_mean,
        after.cost_mean,
        outcome.rows.len(),
        if outcome.satisfied {
            "satisfied"
        } else {
            "budget exhausted, unsatisfied"
        }
    );
    println!(
        "wrote {}, {} and {}",
        out.display(),
        log_path.display(),
        summary_path.display()
    );
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Result<(), Failure> {
    if let Some(c) = &a.corrupt {
        if !selfcheck::case_names().contains(&c.as_str()) {
            return Err(Failure::usage(format!("unknown gradient-check case `{c}`")));
        }
    }
    let out = output_path(&a.out)?;
    let results = selfcheck::run_suite(a.corrupt.as_deref())?;
    let mut csv = String::from("case,tolerance,max_rel_err,worst_parameter,checked,passed\n");
    println!(
        "{:<26} {:>10} {:>12}  result",
        "case", "tolerance", "max rel err"
    );
    for r in &results {
        let worst = r
            .report
            .worst
            .as_ref()
            .map(|(n, i)| format!("{n}[{i}]"))
            .unwrap_or_default();
        println!(
            "{:<26} {:>10.0e} {:>12.3e}  {}",
            r.name,
            r.tol,
            r.report.max_rel_err,
            if r.passed() { "ok" } else { "FAIL" }
        );
        csv.push_str(&format!(
            "{},{},{},{worst},{},{}\n",
            r.name,
            r.tol,
            r.report.max_rel_err,
            r.report.checked,
            r.passed()
        ));
    }
    write(&out, &csv)?;
    let mut e = Echo::new("gradcheck");
    e.path("out", &out);
    if let Some(c) = &a.corrupt {
        e.set("corrupt", c);
    }
    e.write_beside(&out)?;

    let worst = results
        .iter()
        .filter(|r| !r.passed())
        .max_by(|x, y| (x.report.max_rel_err / x.tol).total_cmp(&(y.report.max_rel_err / y.tol)));
    match worst {
        Some(r) => Err(Failure::check(format!(
            "gradient check failed; worst offender `{}` (max rel err {:.3e} vs tolerance {:.0e})",
            r.name, r.report.max_rel_err, r.tol
        ))),
        None => {
            println!("all {} cases pass", results.len());
            Ok(())
        }
    }
}
