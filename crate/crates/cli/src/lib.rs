//! The `trex` command line.
//!
//! Every subcommand reads and writes artifacts in one run directory and
//! records them, with content hashes, in `manifest.json` there. Settings
//! come from built-in defaults, then `--config` (schema `trex-config/1`),
//! then flags.

use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use trex_core::demos::{
    generate_demos, inject_swap_noise, load_demos, load_rankings, rank_by_gt, rank_by_time, rank_by_votes,
    render_rankings, swaps_for_correctness, train_demonstrator, write_demos, RankedDataset, VoteRecord,
    DEMOS_SCHEMA, RANKINGS_SCHEMA,
};
use trex_core::env::{gt_reward, GridworldSpec, Trajectory, SPEC_SCHEMA};
use trex_core::eval::{
    cap_held_out, extrapolation_report, held_out_rollouts, noise_sweep, saliency_report, scatter_svg, summary_table,
    NoiseSweepConfig, EXTRAPOLATION_SCHEMA,
};
use trex_core::policy::{
    clone_best_demo, evaluate_policy, load_policy, render_policy, value_iteration, TabularPolicy, POLICY_SCHEMA,
};
use trex_core::presets;
use trex_core::reward::{
    gradient_check, render_train_log, squashed_reward, train_reward_logged, Ensemble, ENSEMBLE_SCHEMA,
};
use trex_core::{Error, Result};
use trex_labeld::{AppState, LabelSession};

pub mod config;
pub mod rundir;

use config::{parse_horizon, Settings};
use rundir::{sha256_hex, Step};

pub const SPEC_FILE: &str = "spec.txt";
pub const DEMOS_FILE: &str = "demos.jsonl";
pub const ALL_DEMOS_FILE: &str = "demos_all.jsonl";
pub const HELD_OUT_FILE: &str = "held_out.jsonl";
pub const RANKINGS_FILE: &str = "rankings.txt";
pub const REWARD_DIR: &str = "reward";
pub const VOTE_LOG_FILE: &str = "votes.jsonl";

/// Grad-check threshold on the max relative error.
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(name = "trex", version, about = "Learn rewards from ranked demonstrations and plan against them")]
pub struct Cli {
    /// Directory holding this experiment's artifacts and manifest.
    #[arg(long, global = true, default_value = "run")]
    pub run_dir: PathBuf,
    /// Settings file (schema trex-config/1); flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train the checkpointed demonstrator and roll out demonstrations.
    GenDemos(GenDemosArgs),
    /// Rank demos.jsonl into rankings.txt.
    Rank(RankArgs),
    /// Rank by ground truth, then apply random adjacent swaps.
    Corrupt(CorruptArgs),
    /// Train the reward ensemble on demos.jsonl + rankings.txt.
    TrainReward(TrainArgs),
    /// Compare analytic and finite-difference gradients of the ranking loss.
    GradCheck(GradCheckArgs),
    /// Value iteration on the learned, true or zero reward.
    Plan(PlanArgs),
    /// Roll out a planned or cloned policy on the true reward.
    Evaluate(EvaluateArgs),
    /// Predicted vs true returns on demos and held-out rollouts.
    Extrapolate(ExtrapolateArgs),
    /// Retrain and re-plan across ranking-noise levels.
    SweepNoise(SweepArgs),
    /// Per-feature masking attributions of the learned reward.
    Saliency,
    /// Best demo, average demo, T-REX, clone and oracle returns.
    Summary,
    /// Serve the pairwise labeling API for demos.jsonl.
    LabelServe(LabelServeArgs),
}

#[derive(Args, Debug)]
pub struct GenDemosArgs {
    /// Spec file or preset name [default: extrap-9].
    #[arg(long)]
    pub spec: Option<String>,
    #[arg(long)]
    pub seed: u64,
    /// Demonstrations rolled out per checkpoint [default: 1].
    #[arg(long)]
    pub per_checkpoint: Option<usize>,
    /// Keep stage1 (worst third), stage2 (worst half) or stage3 (all) [default: stage3].
    #[arg(long)]
    pub stage: Option<String>,
    /// Q-learning updates [default: 22000].
    #[arg(long)]
    pub total_updates: Option<usize>,
    /// Updates between checkpoints [default: 2000].
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Held-out rollouts per checkpoint for `extrapolate` [default: 4].
    #[arg(long)]
    pub held_out: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RankBy {
    Gt,
    Time,
    Votes,
}

#[derive(Args, Debug)]
pub struct RankArgs {
    #[arg(long, value_enum)]
    pub by: RankBy,
    /// Exported vote records (JSON list); defaults to replaying votes.jsonl.
    #[arg(long)]
    pub votes: Option<PathBuf>,
    /// Votes counted per pair when replaying the log [default: 6].
    #[arg(long)]
    pub target_votes: Option<usize>,
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false, id = "amount")]
pub struct CorruptAmount {
    /// Number of adjacent swaps.
    #[arg(long, group = "amount")]
    pub swaps: Option<i64>,
    /// Smallest swap count whose order correctness is at most this.
    #[arg(long, group = "amount")]
    pub correctness: Option<f64>,
}

#[derive(Args, Debug)]
pub struct CorruptArgs {
    #[command(flatten)]
    pub amount: CorruptAmount,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Args, Debug, Default)]
pub struct TrainOverrides {
    /// Adam steps per net [default: 10000].
    #[arg(long)]
    pub steps: Option<usize>,
    /// Adam learning rate [default: 1e-4].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Nets in the ensemble [default: 5].
    #[arg(long)]
    pub ensemble_size: Option<usize>,
    /// Hidden layer widths, comma separated [default: 64,64].
    #[arg(long)]
    pub hidden: Option<String>,
    /// Sampled segment pairs per net [default: 5000].
    #[arg(long)]
    pub num_pairs: Option<usize>,
    /// Minibatch size [default: 64].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Coupled L2 weight decay [default: 0].
    #[arg(long)]
    pub weight_decay: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub train: TrainOverrides,
}

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    #[arg(long)]
    pub seed: u64,
    /// Random nets to check.
    #[arg(long, default_value_t = 20)]
    pub nets: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RewardKind {
    Learned,
    Gt,
    Zero,
}

impl RewardKind {
    fn name(self) -> &'static str {
        match self {
            RewardKind::Learned => "learned",
            RewardKind::Gt => "gt",
            RewardKind::Zero => "zero",
        }
    }
}

#[derive(Args, Debug)]
pub struct PlanArgs {
    #[arg(long, value_enum)]
    pub reward: RewardKind,
    /// episode (finite-horizon backward induction) or infinite (discounted) [default: episode].
    #[arg(long)]
    pub horizon: Option<String>,
    /// Planning discount [default: 1].
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyKind {
    Learned,
    Gt,
    Zero,
    Clone,
}

impl PolicyKind {
    /// Column label in the summary table.
    pub fn label(self) -> &'static str {
        match self {
            PolicyKind::Learned => "trex",
            PolicyKind::Gt => "oracle",
            PolicyKind::Zero => "zero",
            PolicyKind::Clone => "clone",
        }
    }
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Which policy: a planned one (learned, gt, zero) or the clone of the best demo.
    #[arg(long, value_enum)]
    pub policy: PolicyKind,
    #[arg(long)]
    pub seed: u64,
    /// Episodes [default: 100].
    #[arg(long)]
    pub episodes: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ExtrapolateArgs {
    /// Keep held-out rollouts with return at most this multiple of the best demo [default: 2].
    #[arg(long)]
    pub cap_ratio: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub seed: u64,
    /// Repetitions per level [default: 9].
    #[arg(long)]
    pub reps: Option<usize>,
    /// Order-correctness levels, comma separated [default: 1,0.95,0.85,0.7,0.5].
    #[arg(long)]
    pub levels: Option<String>,
    /// Evaluation episodes per run [default: 100].
    #[arg(long)]
    pub episodes: Option<usize>,
    #[command(flatten)]
    pub train: TrainOverrides,
}

#[derive(Args, Debug)]
pub struct LabelServeArgs {
    /// Seeds the pair order and left/right assignment.
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value = trex_labeld::DEFAULT_ADDR)]
    pub bind: SocketAddr,
    /// Votes per pair before it retires [default: 6].
    #[arg(long)]
    pub target_votes: Option<usize>,
    /// Directory of UI assets served from `/`.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

fn parse_csv_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| Error::Invalid(format!("{what}: cannot parse `{p}`"))))
        .collect()
}

fn apply_train(s: &mut Settings, t: &TrainOverrides) -> Result<()> {
    if let Some(v) = t.steps {
        s.train.train_steps = v;
    }
    if let Some(v) = t.lr {
        s.train.lr = v;
    }
    if let Some(v) = t.ensemble_size {
        s.train.ensemble_size = v;
    }
    if let Some(v) = &t.hidden {
        s.train.hidden = parse_csv_list(v, "--hidden")?;
    }
    if let Some(v) = t.num_pairs {
        s.train.num_pairs = v;
    }
    if let Some(v) = t.batch_size {
        s.train.batch_size = v;
    }
    if let Some(v) = t.weight_decay {
        s.train.weight_decay = v;
    }
    s.train.validate()
}

/// A spec file path, or a preset name when no such file exists.
pub fn resolve_spec(name: &str) -> Result<GridworldSpec> {
    let p = Path::new(name);
    if p.exists() {
        return GridworldSpec::load(p);
    }
    presets::by_name(name).ok_or_else(|| Error::MissingArtifact(p.to_path_buf()))
}

fn demos_bytes(demos: &[Trajectory]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_demos(&mut buf, demos).map_err(|e| Error::Io { path: "<memory>".into(), source: e })?;
    Ok(buf)
}

fn load_spec(step: &mut Step) -> Result<GridworldSpec> {
    GridworldSpec::load(&step.input(SPEC_FILE)?)
}

fn load_run_demos(step: &mut Step, spec: &GridworldSpec) -> Result<Vec<Trajectory>> {
    load_demos(&step.input(DEMOS_FILE)?, Some(spec))
}

fn dataset_id(step: &Step) -> Result<String> {
    let p = step.path(DEMOS_FILE);
    let bytes = std::fs::read(&p).map_err(|e| Error::Io { path: p, source: e })?;
    Ok(sha256_hex(&bytes)[..16].to_string())
}

/// Runs one parsed command line; returns the text to print.
pub fn run(cli: Cli) -> Result<String> {
    let mut s = Settings::load(cli.config.as_deref())?;
    let dir = cli.run_dir.as_path();
    let mut out = String::new();
    match cli.command {
        Command::GenDemos(a) => {
            if let Some(v) = a.spec {
                s.spec = v;
            }
            if let Some(v) = a.per_checkpoint {
                s.per_checkpoint = v;
            }
            if let Some(v) = &a.stage {
                s.stage = v.parse()?;
            }
            if let Some(v) = a.total_updates {
                s.learner.total_updates = v;
            }
            if let Some(v) = a.checkpoint_every {
                s.learner.checkpoint_every = v;
            }
            if let Some(v) = a.held_out {
                s.held_out_per_checkpoint = v;
            }
            if s.per_checkpoint == 0 {
                return Err(Error::Contract("--per-checkpoint must be >= 1".into()));
            }
            let mut step = Step::begin(dir, "gen-demos", Some(a.seed), &s.to_kv().render())?;
            let spec = resolve_spec(&s.spec)?;
            if Path::new(&s.spec).exists() {
                step.external_input(Path::new(&s.spec))?;
            }
            let checkpoints = train_demonstrator(&spec, &s.learner, a.seed)?;
            let all = generate_demos(&spec, &checkpoints, s.per_checkpoint, a.seed)?;
            let chosen = s.stage.select(&all);
            step.write(SPEC_FILE, SPEC_SCHEMA, spec.to_kv().render().as_bytes())?;
            step.write(ALL_DEMOS_FILE, DEMOS_SCHEMA, &demos_bytes(&all)?)?;
            step.write(DEMOS_FILE, DEMOS_SCHEMA, &demos_bytes(&chosen)?)?;
            let mut msg = format!("{} checkpoints, {} demos, {} kept", checkpoints.len(), all.len(), chosen.len());
            if s.held_out_per_checkpoint > 0 {
                let held = held_out_rollouts(&spec, &checkpoints, s.held_out_per_checkpoint, a.seed)?;
                step.write(HELD_OUT_FILE, DEMOS_SCHEMA, &demos_bytes(&held)?)?;
                let _ = write!(msg, ", {} held out", held.len());
            }
            let best = chosen.iter().map(|d| d.gt_return).fold(f64::NEG_INFINITY, f64::max);
            let _ = writeln!(out, "{msg}; best kept return {best:.3}");
            step.finish()?;
        }
        Command::Rank(a) => {
            if let Some(v) = a.target_votes {
                s.target_votes = v;
            }
            let mut step = Step::begin(dir, "rank", None, &s.to_kv().render())?;
            let spec = load_spec(&mut step)?;
            let demos = load_run_demos(&mut step, &spec)?;
            let ds = match a.by {
                RankBy::Gt => rank_by_gt(&demos)?,
                RankBy::Time => rank_by_time(&demos)?,
                RankBy::Votes => {
                    let records: Vec<VoteRecord> = match &a.votes {
                        Some(p) => {
                            step.external_input(p)?;
                            let text = std::fs::read_to_string(p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
                            serde_json::from_str(&text)?
                        }
                        None => {
                            step.input(VOTE_LOG_FILE)?;
                            let session = LabelSession::new(dataset_id(&step)?, &spec, &demos, 0, s.target_votes)
                                .and_then(|x| x.with_log(&step.path(VOTE_LOG_FILE)))
                                .map_err(|e| Error::Invalid(e.to_string()))?;
                            session.export()
                        }
                    };
                    rank_by_votes(&demos, &records)?
                }
            };
            step.write(RANKINGS_FILE, RANKINGS_SCHEMA, render_rankings(&ds).as_bytes())?;
            let _ = writeln!(out, "{} pairs, order correctness {:.4}", ds.pairs.len(), ds.order_correctness);
            step.finish()?;
        }
        Command::Corrupt(a) => {
            let mut step = Step::begin(dir, "corrupt", Some(a.seed), &s.to_kv().render())?;
            let spec = load_spec(&mut step)?;
            let demos = load_run_demos(&mut step, &spec)?;
            let mut order: Vec<usize> = (0..demos.len()).collect();
            order.sort_by(|&x, &y| demos[x].gt_return.total_cmp(&demos[y].gt_return));
            let sorted: Vec<Trajectory> = order.iter().map(|&k| demos[k].clone()).collect();
            let swaps = match (a.amount.swaps, a.amount.correctness) {
                (Some(n), _) => n,
                (None, Some(c)) => swaps_for_correctness(&sorted, c, a.seed, 1_000_000)? as i64,
                (None, None) => unreachable!("clap requires one of --swaps/--correctness"),
            };
            let noisy = inject_swap_noise(&sorted, swaps, a.seed)?;
            let ds = RankedDataset {
                trajectories: demos,
                pairs: noisy.pairs.iter().map(|&(i, j)| (order[i], order[j])).collect(),
                provenance: noisy.provenance,
                order_correctness: noisy.order_correctness,
            };
            step.write(RANKINGS_FILE, RANKINGS_SCHEMA, render_rankings(&ds).as_bytes())?;
            let _ = writeln!(out, "{swaps} swaps, order correctness {:.4}", ds.order_correctness);
            step.finish()?;
        }
        Command::TrainReward(a) => {
            apply_train(&mut s, &a.train)?;
            s.train.seed = a.seed;
            let mut step = Step::begin(dir, "train-reward", Some(a.seed), &s.to_kv().render())?;
            let spec = load_spec(&mut step)?;
            let demos = load_run_demos(&mut step, &spec)?;
            let ds = load_rankings(&step.input(RANKINGS_FILE)?, demos)?;
            let report = train_reward_logged(&ds, &s.train)?;
            report.ensemble.save(&step.path(REWARD_DIR))?;
            step.produced(REWARD_DIR, ENSEMBLE_SCHEMA);
            step.write("train_log.csv", "csv:net,step,mean_loss,pair_accuracy", render_train_log(&report.log).as_bytes())?;
            let acc: Vec<String> = report.pool_accuracy.iter().map(|x| format!("{x:.3}")).collect();
            let _ = writeln!(out, "trained {} nets; training pair accuracy {}", report.ensemble.len(), acc.join(" "));
            step.finish()?;
        }
        Command::GradCheck(a) => {
            let mut step = Step::begin(dir, "grad-check", Some(a.seed), &s.to_kv().render())?;
            let f = match GridworldSpec::load(&step.path(SPEC_FILE)) {
                Ok(spec) => spec.num_features,
                Err(_) => resolve_spec(&s.spec)?.num_features,
            };
            let errors = gradient_check(&s.train.layer_sizes(f), a.nets, 8, 6, a.seed)?;
            let worst = errors.iter().copied().fold(0.0, f64::max);
            let mut text = String::from("net,max_relative_error\n");
            for (k, e) in errors.iter().enumerate() {
                let _ = writeln!(text, "{k},{e:e}");
            }
            step.write("grad_check.csv", "csv:net,max_relative_error", text.as_bytes())?;
            step.finish()?;
            let _ = writeln!(out, "max relative error {worst:e} over {} nets (tolerance {GRAD_CHECK_TOLERANCE:e})", a.nets);
            if !(worst < GRAD_CHECK_TOLERANCE) {
                return Err(Error::Invalid(format!("gradient check failed: {worst:e} >= {GRAD_CHECK_TOLERANCE:e}")));
            }
        }
        Command::Plan(a) => {
            if let Some(h) = &a.horizon {
                s.plan.horizon = parse_horizon(h)?;
            }
            if let Some(g) = a.gamma {
                s.plan.gamma = g;
            }
            let mut step = Step::begin(dir, &format!("plan-{}", a.reward.name()), None, &s.to_kv().render())?;
            let spec = load_spec(&mut step)?;
            let rewards: Vec<f64> = match a.reward {
                RewardKind::Zero => vec![0.0; spec.num_cells()],
                RewardKind::Gt => spec.cells().map(|c| gt_reward(&spec, c)).collect::<Result<_>>()?,
                RewardKind::Learned => {
                    let ens = Ensemble::load(&step.input(REWARD_DIR)?)?;
                    spec.cells().map(|c| squashed_reward(&ens, spec.features(c)?)).collect::<Result<_>>()?
                }
            };
            let plan = value_iteration(&spec, |c| rewards[spec.cell_index(c)], &s.plan)?;
            // every action is optimal under the zero reward, so act uniformly
            let policy = match a.reward {
                RewardKind::Zero => TabularPolicy::uniform(&spec),
                _ => plan.policy,
            };
            let name = format!("policy_{}.txt", a.reward.name());
            step.write(&name, POLICY_SCHEMA, render_policy(&policy, Some(&plan.values)).as_bytes())?;
            let _ = writeln!(out, "wrote {name} ({} sweeps, residual {:e})", plan.iterations, plan.residual);
            step.finish()?;
        }
        Command::Evaluate(a) => {
            if let Some(v) = a.episodes {
                s.episodes = v;
            }
            let label = a.policy.label();
            let mut step = Step::begin(dir, &format!("evaluate-{label}"), Some(a.seed), &s.to_kv().render())?;
            let spec = load_spec(&mut step)?;
            let policy: TabularPolicy = match a.policy {
                PolicyKind::Clone => clone_best_demo(&spec, &load_run_demos(&mut step, &spec)?)?,
                p => {
                    let kind = match p {
                        PolicyKind::Learned => "learned",
                        PolicyKind::Gt => "gt",
                        _ => "zero",
                    };
                    load_policy(&step.input(&format!("policy_{kind}.txt"))?)?.0
                }
            };
            let stats = evaluate_policy(&spec, &policy, s.episodes, a.seed)?;
            step.write(&format!("eval_{label}.csv"), "csv:seed,episode,return", stats.to_csv(a.seed).as_bytes())?;
            let _ = writeln!(
                out,
                "{label}: mean {:.3} ± {:.3} (std {:.3}, min {:.3}, max {:.3}, {} episodes)",
                stats.mean,
                stats.ci95(),
                stats.std,
                stats.min,
                stats.max,
                stats.episodes
            );
            step.finish()?;
        }
        Command::Extrapolate(a) => {
            if let Some(v) = a.cap_ratio {
                s.cap_ratio = v;
            }
            let mut step = Step::begin(dir, "extrapolate", None, &s.to_kv().render())?;
            let spec = load_spec(&mut step)?;
            let demos = load_run_demos(&mut step, &spec)?;
            let held = load_demos(&step.input(HELD_OUT_FILE)?, Some(&spec))?;
            let ens = Ensemble::load(&step.input(REWARD_DIR)?)?;
            let held = cap_held_out(&held, &demos, s.cap_ratio);
            let report = extrapolation_report(&ens, &spec, &demos, &held)?;
            let csv = report.to_csv();
            let mut meta = report.metadata();
            meta.set("cap_ratio", s.cap_ratio);
            meta.set("held_out", held.len());
            step.write("extrapolation.csv", "csv:id,kind,gt_return,predicted_return,normalized", csv.as_bytes())?;
            step.write("extrapolation.txt", EXTRAPOLATION_SCHEMA, meta.render().as_bytes())?;
            step.write("extrapolation.svg", "svg", scatter_svg(&csv)?.as_bytes())?;
            let _ = writeln!(
                out,
                "pearson {:.4}, spearman {:.4} over {} held-out trajectories; demo max {:.3}",
                report.pearson,
                report.spearman,
                held.len(),
                report.demo_max
            );
            step.finish()?;
        }
        Command::SweepNoise(a) => {
            apply_train(&mut s, &a.train)?;
            if let Some(v) = a.reps {
                s.sweep_reps = v;
            }
            if let Some(v) = &a.levels {
                s.sweep_levels = parse_csv_list(v, "--levels")?;
            }
            if let Some(v) = a.episodes {
                s.episodes = v;
            }
            s.train.seed = a.seed;
            let mut step = Step::begin(dir, "sweep-noise", Some(a.seed), &s.to_kv().render())?;
            let spec = load_spec(&mut step)?;
            let mut demos = load_run_demos(&mut step, &spec)?;
            demos.sort_by(|x, y| x.gt_return.total_cmp(&y.gt_return));
            let cfg = NoiseSweepConfig {
                levels: s.sweep_levels.clone(),
                reps: s.sweep_reps,
                seed: a.seed,
                train: s.train.clone(),
                plan: s.plan,
                episodes: s.episodes,
                max_swaps: 1_000_000,
            };
            let sweep = noise_sweep(&spec, &demos, &cfg)?;
            step.write("sweep.csv", "csv:level,mean_correctness,mean_return,ci95,reps", sweep.to_csv().as_bytes())?;
            step.write(
                "sweep_runs.csv",
                "csv:level,rep,swaps,order_correctness,mean_return",
                sweep.runs_csv().as_bytes(),
            )?;
            out.push_str(&sweep.to_csv());
            step.finish()?;
        }
        Command::Saliency => {
            let mut step = Step::begin(dir, "saliency", None, &s.to_kv().render())?;
            let spec = load_spec(&mut step)?;
            let demos = load_run_demos(&mut step, &spec)?;
            let ens = Ensemble::load(&step.input(REWARD_DIR)?)?;
            let rep = saliency_report(&ens, &demos)?;
            step.write("saliency.csv", "csv:feature,mean_attribution", rep.to_csv().as_bytes())?;
            let mut text = String::new();
            for (tag, loc) in [("max", &rep.argmax), ("min", &rep.argmin)] {
                let cell = spec.locate(&loc.observation)?;
                let _ = writeln!(
                    text,
                    "{tag}: {} t={} cell {cell} reward {:.4}",
                    demos[loc.trajectory].id, loc.t, loc.reward
                );
            }
            let ranking: Vec<String> = rep.ranking().iter().map(usize::to_string).collect();
            let _ = writeln!(text, "features by attribution: {}", ranking.join(" "));
            step.write("saliency.txt", "text", text.as_bytes())?;
            out.push_str(&rep.to_csv());
            out.push_str(&text);
            step.finish()?;
        }
        Command::Summary => {
            let mut step = Step::begin(dir, "summary", None, &s.to_kv().render())?;
            let sum = summary_table(dir)?;
            for name in trex_core::eval::SUMMARY_INPUTS {
                step.input(name)?;
            }
            step.write("summary.csv", "csv:best_demo,average_demo,trex,clone,oracle", sum.to_csv().as_bytes())?;
            step.write("summary.txt", "text", sum.to_text().as_bytes())?;
            out.push_str(&sum.to_text());
            step.finish()?;
        }
        Command::LabelServe(a) => {
            if let Some(v) = a.target_votes {
                s.target_votes = v;
            }
            let mut step = Step::begin(dir, "label-serve", Some(a.seed), &s.to_kv().render())?;
            let spec = load_spec(&mut step)?;
            let demos = load_run_demos(&mut step, &spec)?;
            let session = LabelSession::new(dataset_id(&step)?, &spec, &demos, a.seed, s.target_votes)
                .and_then(|x| x.with_log(&step.path(VOTE_LOG_FILE)))
                .map_err(|e| Error::Invalid(e.to_string()))?;
            step.finish()?;
            let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::Io { path: dir.into(), source: e })?;
            runtime
                .block_on(trex_labeld::serve(a.bind, AppState::new(Some(session)), a.static_dir))
                .map_err(|e| Error::Io { path: dir.into(), source: e })?;
        }
    }
    Ok(out)
}
