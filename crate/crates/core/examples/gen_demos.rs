//! Trains the checkpointed Q-learning demonstrator on extrap-9 and rolls out
//! one demonstration per checkpoint.
//!
//! `cargo run --release --example gen_demos -- [seed]`

use trex_core::demos::{generate_demos, train_demonstrator, Stage};
use trex_core::policy::LearnerConfig;
use trex_core::presets;

fn main() -> trex_core::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let spec = presets::extrap9();
    let checkpoints = train_demonstrator(&spec, &LearnerConfig::default(), seed)?;
    let demos = generate_demos(&spec, &checkpoints, 1, seed)?;
    println!("{:<16} {:>8} {:>10}", "id", "step", "return");
    for d in &demos {
        println!("{:<16} {:>8} {:>10.3}", d.id, d.created_step, d.gt_return);
    }
    for stage in [Stage::Stage1, Stage::Stage2, Stage::Stage3] {
        let kept = stage.select(&demos);
        let best = kept.iter().map(|d| d.gt_return).fold(f64::NEG_INFINITY, f64::max);
        println!("{stage:?}: {} demos, best return {best:.3}", kept.len());
    }
    Ok(())
}
