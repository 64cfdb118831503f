//! Which observation features the learned reward depends on: zero each
//! feature in turn and measure the change in predicted reward.

use trex_core::demos::{generate_demos, rank_by_gt, train_demonstrator, Stage};
use trex_core::eval::saliency_report;
use trex_core::policy::LearnerConfig;
use trex_core::presets;
use trex_core::reward::{train_reward, TrainConfig};

const FEATURES: [&str; 6] = ["goal proximity", "hazard", "coin", "row", "wave", "checkerboard"];

fn main() -> trex_core::Result<()> {
    let spec = presets::extrap9();
    let checkpoints = train_demonstrator(&spec, &LearnerConfig::default(), 0)?;
    let demos = Stage::Stage1.select(&generate_demos(&spec, &checkpoints, 1, 0)?);
    let ens = train_reward(&rank_by_gt(&demos)?, &TrainConfig::default())?;
    let rep = saliency_report(&ens, &demos)?;
    for f in rep.ranking() {
        println!("{:<15} weight {:>5} attribution {:.4}", FEATURES[f], spec.gt_weights[f], rep.mean_attribution[f]);
    }
    for (tag, loc) in [("highest", &rep.argmax), ("lowest", &rep.argmin)] {
        let cell = spec.locate(&loc.observation)?;
        println!("{tag} reward {:.3} at cell {cell} ({} t={})", loc.reward, demos[loc.trajectory].id, loc.t);
    }
    Ok(())
}
