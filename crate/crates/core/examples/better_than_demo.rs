//! The full pipeline on the worst third of the demonstrations: learn a reward
//! from their ranking, plan on it and compare with the demonstrations, a
//! behavioral clone of the best one and the true-reward planner.
//!
//! `cargo run --release --example better_than_demo -- [seed]`

use trex_core::demos::{generate_demos, rank_by_gt, train_demonstrator, Stage};
use trex_core::env::gt_reward;
use trex_core::eval::run_pipeline;
use trex_core::policy::{clone_best_demo, evaluate_policy, value_iteration, LearnerConfig, PlanConfig};
use trex_core::presets;
use trex_core::reward::TrainConfig;

fn main() -> trex_core::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let spec = presets::extrap9();
    let checkpoints = train_demonstrator(&spec, &LearnerConfig::default(), seed)?;
    let demos = Stage::Stage1.select(&generate_demos(&spec, &checkpoints, 1, seed)?);
    let best = demos.iter().map(|d| d.gt_return).fold(f64::NEG_INFINITY, f64::max);
    let average = demos.iter().map(|d| d.gt_return).sum::<f64>() / demos.len() as f64;

    let train = TrainConfig { seed, ..TrainConfig::default() };
    let trex = run_pipeline(&spec, &rank_by_gt(&demos)?, &train, &PlanConfig::default(), 100, seed)?;
    let clone = evaluate_policy(&spec, &clone_best_demo(&spec, &demos)?, 100, seed)?;
    let oracle_plan = value_iteration(&spec, |c| gt_reward(&spec, c).unwrap(), &PlanConfig::default())?;
    let oracle = evaluate_policy(&spec, &oracle_plan.policy, 100, seed)?;

    println!("best demo     {best:>8.3}");
    println!("average demo  {average:>8.3}");
    println!("T-REX         {:>8.3} ± {:.3}  ({:.2}x best demo)", trex.stats.mean, trex.stats.ci95(), trex.stats.mean / best);
    println!("clone         {:>8.3} ± {:.3}", clone.mean, clone.ci95());
    println!("oracle        {:>8.3} ± {:.3}", oracle.mean, oracle.ci95());
    Ok(())
}
