//! Built-in gridworlds. The same specs ship as text files under `specs/`.

use std::f64::consts::PI;

use crate::env::{Cell, GridworldSpec};

pub const EXTRAP9_HAZARDS: [Cell; 7] = [
    Cell::new(1, 3),
    Cell::new(2, 3),
    Cell::new(3, 1),
    Cell::new(3, 2),
    Cell::new(5, 5),
    Cell::new(5, 6),
    Cell::new(6, 5),
];

pub const EXTRAP9_COINS: [Cell; 3] = [Cell::new(4, 1), Cell::new(1, 5), Cell::new(6, 0)];

pub const EXTRAP9_GOAL: Cell = Cell::new(8, 8);

/// Low-frequency bump over the grid, quantized to 1/1024 so spec files
/// round-trip exactly.
fn smooth_wave(x: usize, y: usize) -> f64 {
    let (fx, fy) = (x as f64 * PI / 4.0, y as f64 * PI / 8.0);
    ((0.5 + 0.5 * fx.sin() * fy.cos()) * 1024.0).round() / 1024.0
}

/// The 9x9 extrapolation benchmark.
///
/// Features, in order: goal proximity `1 - manhattan/16`, hazard indicator,
/// coin indicator, the row `y/8`, a smooth wave and a checkerboard. Only the first three
/// carry weight in the true reward.
pub fn extrap9() -> GridworldSpec {
    let (width, height) = (9, 9);
    let max_dist = (EXTRAP9_GOAL.x + EXTRAP9_GOAL.y) as f64;
    let mut feature_grid = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let cell = Cell::new(x, y);
            let dist = (x.abs_diff(EXTRAP9_GOAL.x) + y.abs_diff(EXTRAP9_GOAL.y)) as f64;
            feature_grid.push(vec![
                1.0 - dist / max_dist,
                f64::from(EXTRAP9_HAZARDS.contains(&cell) as u8),
                f64::from(EXTRAP9_COINS.contains(&cell) as u8),
                y as f64 / (height - 1) as f64,
                smooth_wave(x, y),
                ((x + y) % 2) as f64,
            ]);
        }
    }
    GridworldSpec {
        name: "extrap-9".into(),
        width,
        height,
        num_features: 6,
        feature_grid,
        gt_weights: vec![1.0, -1.0, 0.5, 0.0, 0.0, 0.0],
        start_cells: vec![Cell::new(0, 0)],
        terminal_cells: vec![],
        horizon: 60,
        slip_prob: 0.1,
    }
}

/// Looks up a built-in spec by name.
pub fn by_name(name: &str) -> Option<GridworldSpec> {
    match name {
        "extrap-9" | "extrap9" => Some(extrap9()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::gt_reward;

    #[test]
    fn extrap9_is_valid_and_cells_are_distinguishable() {
        let spec = extrap9();
        spec.validate().unwrap();
        for c in spec.cells() {
            assert_eq!(spec.locate(spec.features(c).unwrap()).unwrap(), c);
        }
    }

    #[test]
    fn goal_is_the_best_cell() {
        let spec = extrap9();
        let best = spec
            .cells()
            .max_by(|a, b| gt_reward(&spec, *a).unwrap().total_cmp(&gt_reward(&spec, *b).unwrap()))
            .unwrap();
        assert_eq!(best, EXTRAP9_GOAL);
    }
}
