//! Finite-horizon value iteration on the true reward of extrap-9; prints the
//! first-step policy and the exact expected return.

use trex_core::env::{gt_reward, Action, Cell};
use trex_core::policy::{exact_return, value_iteration, PlanConfig};
use trex_core::presets;

fn arrow(a: Action) -> char {
    match a {
        Action::Up => '^',
        Action::Down => 'v',
        Action::Left => '<',
        Action::Right => '>',
        Action::Stay => 'o',
    }
}

fn main() -> trex_core::Result<()> {
    let spec = presets::extrap9();
    let plan = value_iteration(&spec, |c| gt_reward(&spec, c).unwrap(), &PlanConfig::default())?;
    for y in 0..spec.height {
        let row: String = (0..spec.width).map(|x| arrow(plan.policy.greedy_action(Cell { x, y }, 0))).collect();
        println!("{row}");
    }
    let start = spec.start_cells[0];
    println!("value at start {:.4}", plan.values[0][spec.cell_index(start)]);
    println!("exact expected return {:.4}", exact_return(&spec, &plan.policy));
    Ok(())
}
