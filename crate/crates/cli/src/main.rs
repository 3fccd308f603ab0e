//! `saformer` command-line driver.
//!
//! Exit codes: 0 success, 1 failed check (gradient check, divergence,
//! non-finite rollout), 2 usage or I/O error.

mod commands;
mod echo;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use saformer::actor::ActorMode;
use saformer::config::{Profile, Regularizer, RunConfig};
use saformer::parallel::Exec;

use echo::Echo;

#[derive(Parser, Debug)]
#[command(
    name = "saformer",
    version,
    about = "Offline safe RL with cost-conditioned transformers"
)]
struct Cli {
    /// Replay a run from its `.config` echo file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Roll out behaviour policies into a dataset file.
    GenData(GenDataArgs),
    /// Per-trajectory reward and cost returns as CSV.
    Stats(StatsArgs),
    /// Offline training of actor and critic.
    Train(TrainArgs),
    /// Evaluate a checkpoint at one cost limit.
    Eval(EvalArgs),
    /// Evaluate one checkpoint at several percentile thresholds.
    Sweep(SweepArgs),
    /// Online fine-tuning toward an out-of-distribution cost limit.
    Finetune(FinetuneArgs),
    /// Finite-difference checks of every gradient.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long, default_value = "point1d")]
    env: String,
    #[arg(long, default_value_t = 500)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cost discount used when labelling cost-to-go.
    #[arg(long, default_value_t = 1.0)]
    gamma_c: f64,
    #[arg(long, default_value = "data.json")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "stats.csv")]
    out: PathBuf,
}

/// Model shape and training-length settings; unset values come from the profile.
#[derive(Args, Debug)]
struct ArchArgs {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    n_blocks: Option<usize>,
    #[arg(long)]
    n_heads: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    mode: Option<ActorMode>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    iterations_per_epoch: Option<usize>,
    /// Episodes of the per-epoch evaluation.
    #[arg(long)]
    eval_episodes: Option<usize>,
    #[arg(long)]
    n_candidates: Option<usize>,
}

/// Optimizer settings; unset values come from the profile.
#[derive(Args, Debug)]
struct OptimArgs {
    #[arg(long, default_value = "desk")]
    profile: Profile,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    regularizer: Option<Regularizer>,
    /// Gradient-norm clip; 0 disables clipping.
    #[arg(long)]
    grad_clip: Option<f64>,
    /// Weight of the critic's monotonicity hinge.
    #[arg(long)]
    lambda: Option<f64>,
    /// Prompt attenuation factor during fine-tuning.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    entropy_target: Option<f64>,
    #[arg(long)]
    dual_lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    exec: Option<Exec>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    optim: OptimArgs,
    /// Cost-return percentile used as the limit of the per-epoch evaluation.
    #[arg(long, default_value_t = 50.0)]
    eval_percentile: f64,
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
    /// Defaults to `<out>.metrics.csv`.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Verify {
    On,
    Off,
}

impl Verify {
    fn as_str(self) -> &'static str {
        match self {
            Verify::On => "on",
            Verify::Off => "off",
        }
    }
}

#[derive(Args, Debug)]
struct ExecArgs {
    #[arg(long, default_value = "on")]
    verify: Verify,
    /// Resampling rounds after the first before the fallback.
    #[arg(long, default_value_t = saformer::executor::DEFAULT_RESAMPLE_ROUNDS)]
    resample_rounds: usize,
    #[arg(long, default_value_t = 20)]
    episodes: usize,
    /// Episode `i` uses seed `seed + i`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "parallel")]
    exec: Exec,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Cost limit in raw units.
    #[arg(
        long,
        conflicts_with = "percentile",
        required_unless_present = "percentile"
    )]
    limit: Option<f64>,
    /// Cost-return percentile of `--data` used as the limit.
    #[arg(long, requires = "data")]
    percentile: Option<f64>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    n_candidates: usize,
    #[command(flatten)]
    run: ExecArgs,
    #[arg(long, default_value = "eval.csv")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "10,20,30,50")]
    percentiles: Vec<f64>,
    /// Cost discount for thresholds and budget accounting; defaults to the checkpoint's.
    #[arg(long)]
    gamma_c: Option<f64>,
    #[arg(long, value_delimiter = ',', default_value = "128")]
    n_candidates: Vec<usize>,
    #[command(flatten)]
    run: ExecArgs,
    #[arg(long, default_value = "sweep.csv")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FinetuneArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    optim: OptimArgs,
    /// Target cost limit in raw units.
    #[arg(long, conflicts_with = "below_min")]
    target: Option<f64>,
    /// Target as a fraction below the dataset's cheapest trajectory.
    #[arg(long, default_value_t = 0.1)]
    below_min: f64,
    #[arg(long, default_value_t = 200)]
    budget: usize,
    #[arg(long, default_value_t = 10)]
    updates_per_rollout: usize,
    #[arg(long, default_value_t = 5)]
    rolling_window: usize,
    /// Candidates per step during fine-tuning and its before/after evaluations.
    #[arg(long, default_value_t = 16)]
    n_candidates: usize,
    /// Episodes of the before/after evaluation at the target.
    #[arg(long, default_value_t = 20)]
    eval_episodes: usize,
    #[arg(long, default_value = "finetuned.json")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value = "gradcheck.csv")]
    out: PathBuf,
    /// Scale the analytic gradient of one case (exercises failure reporting).
    #[arg(long, hide = true)]
    corrupt: Option<String>,
}

impl ArchArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { cfg.$f = v; })* };
        }
        set!(
            k,
            embed_dim,
            n_blocks,
            n_heads,
            dropout,
            mode,
            epochs,
            iterations_per_epoch,
            eval_episodes,
            n_candidates
        );
    }

    fn echo(cfg: &RunConfig, e: &mut Echo) {
        e.set("k", cfg.k)
            .set("embed-dim", cfg.embed_dim)
            .set("n-blocks", cfg.n_blocks)
            .set("n-heads", cfg.n_heads)
            .set("dropout", cfg.dropout)
            .set("mode", cfg.mode.as_str())
            .set("epochs", cfg.epochs)
            .set("iterations-per-epoch", cfg.iterations_per_epoch)
            .set("eval-episodes", cfg.eval_episodes)
            .set("n-candidates", cfg.n_candidates);
    }
}

impl OptimArgs {
    fn config(&self) -> RunConfig {
        let mut cfg = RunConfig::profile(self.profile);
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { cfg.$f = v; })* };
        }
        set!(
            batch,
            lr,
            weight_decay,
            regularizer,
            grad_clip,
            lambda,
            alpha,
            dual_lr,
            seed,
            exec
        );
        if self.entropy_target.is_some() {
            cfg.entropy_target = self.entropy_target;
        }
        cfg
    }

    /// `beta` is the resolved entropy target, recorded so a replay does not
    /// depend on how the default is derived.
    fn echo(&self, cfg: &RunConfig, beta: Option<f64>, e: &mut Echo) {
        e.set("profile", self.profile.as_str())
            .set("batch", cfg.batch)
            .set("lr", cfg.lr)
            .set("weight-decay", cfg.weight_decay)
            .set("regularizer", cfg.regularizer.as_str())
            .set("grad-clip", cfg.grad_clip)
            .set("lambda", cfg.lambda)
            .set("alpha", cfg.alpha)
            .set("dual-lr", cfg.dual_lr)
            .set("seed", cfg.seed)
            .set("exec", cfg.exec.as_str());
        if let Some(b) = beta.or(cfg.entropy_target) {
            e.set("entropy-target", b);
        }
    }
}

impl ExecArgs {
    fn echo(&self, e: &mut Echo) {
        e.set("verify", self.verify.as_str())
            .set("resample-rounds", self.resample_rounds)
            .set("episodes", self.episodes)
            .set("seed", self.seed)
            .set("exec", self.exec.as_str());
    }
}

/// A command outcome that maps onto a process exit code.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Failure {
            code: 2,
            msg: msg.into(),
        }
    }

    pub fn check(msg: impl Into<String>) -> Self {
        Failure {
            code: 1,
            msg: msg.into(),
        }
    }
}

impl From<saformer::Error> for Failure {
    fn from(e: saformer::Error) -> Self {
        match e {
            saformer::Error::NonFinite(_) => Failure::check(e.to_string()),
            _ => Failure::usage(e.to_string()),
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let command = match (cli.config, cli.command) {
        (Some(path), None) => {
            let args = echo::replay_args(&path)?;
            let replay = Cli::try_parse_from(&args)
                .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            replay.command.ok_or_else(|| {
                Failure::usage(format!("{}: no command to replay", path.display()))
            })?
        }
        (None, Some(c)) => c,
        _ => {
            return Err(Failure::usage(
                "expected a subcommand or --config <echo file>; see --help",
            ))
        }
    };
    match command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Stats(a) => commands::stats(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Finetune(a) => commands::finetune(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // clap reports --help and --version as "errors" with exit code 0
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
