//! Trains the reward ensemble on the worst third of the demonstrations and
//! prints the learned reward next to the true one for every cell.

use trex_core::demos::{generate_demos, rank_by_gt, train_demonstrator, Stage};
use trex_core::env::gt_reward;
use trex_core::policy::LearnerConfig;
use trex_core::presets;
use trex_core::reward::{dataset_accuracy, ensemble_reward, train_reward_logged, TrainConfig};

fn main() -> trex_core::Result<()> {
    let spec = presets::extrap9();
    let checkpoints = train_demonstrator(&spec, &LearnerConfig::default(), 0)?;
    let demos = Stage::Stage1.select(&generate_demos(&spec, &checkpoints, 1, 0)?);
    let ds = rank_by_gt(&demos)?;
    let report = train_reward_logged(&ds, &TrainConfig::default())?;
    let ens = &report.ensemble;
    for row in report.log.iter().filter(|r| r.net == 0 && r.step % 2000 == 0) {
        println!("net 0 step {:>5}: loss {:.4}, pair accuracy {:.3}", row.step, row.mean_loss, row.pair_accuracy);
    }
    println!("ranking accuracy on the demonstrations: {:.3}", dataset_accuracy(ens, &ds)?);

    println!("\nlearned reward (true reward in brackets)");
    for y in 0..spec.height {
        let mut line = String::new();
        for x in 0..spec.width {
            let c = trex_core::env::Cell { x, y };
            let r = ensemble_reward(ens, spec.features(c)?)?;
            line.push_str(&format!("{r:>6.2} [{:>5.2}]", gt_reward(&spec, c)?));
        }
        println!("{line}");
    }
    Ok(())
}
