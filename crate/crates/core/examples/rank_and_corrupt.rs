//! Ranks demonstrations by true return and by creation time, then corrupts
//! the true order with adjacent swaps until a target order correctness.

use trex_core::demos::{generate_demos, inject_swap_noise, rank_by_gt, rank_by_time, swaps_for_correctness, train_demonstrator};
use trex_core::policy::LearnerConfig;
use trex_core::presets;

fn main() -> trex_core::Result<()> {
    let spec = presets::extrap9();
    let checkpoints = train_demonstrator(&spec, &LearnerConfig::default(), 0)?;
    let mut demos = generate_demos(&spec, &checkpoints, 1, 0)?;

    let gt = rank_by_gt(&demos)?;
    let time = rank_by_time(&demos)?;
    println!("ground truth: {} pairs, correctness {:.3}", gt.pairs.len(), gt.order_correctness);
    println!("time order:   {} pairs, correctness {:.3}", time.pairs.len(), time.order_correctness);

    demos.sort_by(|a, b| a.gt_return.total_cmp(&b.gt_return));
    for target in [0.95, 0.85, 0.7, 0.5] {
        let swaps = swaps_for_correctness(&demos, target, 42, 100_000)?;
        let noisy = inject_swap_noise(&demos, swaps as i64, 42)?;
        println!("target {target:.2}: {swaps:>3} swaps -> correctness {:.3}", noisy.order_correctness);
    }
    Ok(())
}
