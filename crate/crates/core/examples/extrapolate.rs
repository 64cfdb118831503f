//! Predicted versus true returns for the demonstrations and for better
//! held-out rollouts; writes the scatter plot to `extrapolation.svg`.

use trex_core::demos::{generate_demos, rank_by_gt, train_demonstrator, Stage};
use trex_core::eval::{cap_held_out, extrapolation_report, held_out_rollouts, scatter_svg};
use trex_core::policy::LearnerConfig;
use trex_core::presets;
use trex_core::reward::{train_reward, TrainConfig};

fn main() -> trex_core::Result<()> {
    let spec = presets::extrap9();
    let checkpoints = train_demonstrator(&spec, &LearnerConfig::default(), 0)?;
    let demos = Stage::Stage1.select(&generate_demos(&spec, &checkpoints, 1, 0)?);
    let ens = train_reward(&rank_by_gt(&demos)?, &TrainConfig::default())?;
    let held = cap_held_out(&held_out_rollouts(&spec, &checkpoints, 4, 0)?, &demos, 2.0);
    let report = extrapolation_report(&ens, &spec, &demos, &held)?;
    for r in report.rows.iter().filter(|r| r.is_demo) {
        println!("demo {:<16} true {:>8.3} normalized {:>8.3}", r.id, r.gt_return, r.normalized);
    }
    println!("{} held-out rollouts; demo max {:.3}", held.len(), report.demo_max);
    println!("pearson {:.4}, spearman {:.4}", report.pearson, report.spearman);
    std::fs::write("extrapolation.svg", scatter_svg(&report.to_csv())?).map_err(|e| trex_core::Error::Io {
        path: "extrapolation.svg".into(),
        source: e,
    })?;
    Ok(())
}
