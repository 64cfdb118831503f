//! Brute-force optimum for tiny gridworlds, written without the planner.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trex_core::env::{Cell, GridworldSpec};

const MOVES: [(i64, i64); 5] = [(0, -1), (0, 1), (-1, 0), (1, 0), (0, 0)];

fn reward(spec: &GridworldSpec, c: Cell) -> f64 {
    let phi = &spec.feature_grid[c.y * spec.width + c.x];
    phi.iter().zip(&spec.gt_weights).map(|(a, b)| a * b).sum()
}

fn step(spec: &GridworldSpec, c: Cell, m: usize) -> Cell {
    let (x, y) = (c.x as i64 + MOVES[m].0, c.y as i64 + MOVES[m].1);
    if x < 0 || y < 0 || x >= spec.width as i64 || y >= spec.height as i64 {
        c
    } else {
        Cell::new(x as usize, y as usize)
    }
}

/// Intended move `m` plus a uniform slip over all five moves.
fn outcomes(spec: &GridworldSpec, c: Cell, m: usize) -> Vec<(Cell, f64)> {
    let mut out = vec![(step(spec, c, m), 1.0 - spec.slip_prob)];
    for k in 0..5 {
        out.push((step(spec, c, k), spec.slip_prob / 5.0));
    }
    out.retain(|o| o.1 > 0.0);
    out
}

/// Best expected return over every history-dependent policy, by expanding
/// the full tree (no memoization).
pub fn expectimax(spec: &GridworldSpec, c: Cell, t: usize) -> f64 {
    if t == spec.horizon || spec.terminal_cells.contains(&c) {
        return 0.0;
    }
    (0..5)
        .map(|m| {
            outcomes(spec, c, m)
                .into_iter()
                .map(|(n, p)| p * (reward(spec, n) + expectimax(spec, n, t + 1)))
                .sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Without slip a policy from one start is an action sequence; try them all.
pub fn best_sequence(spec: &GridworldSpec, start: Cell) -> f64 {
    assert_eq!(spec.slip_prob, 0.0);
    let total = 5usize.pow(spec.horizon as u32);
    let mut best = f64::NEG_INFINITY;
    for code in 0..total {
        let (mut c, mut k, mut ret) = (start, code, 0.0);
        for _ in 0..spec.horizon {
            if spec.terminal_cells.contains(&c) {
                break;
            }
            c = step(spec, c, k % 5);
            k /= 5;
            ret += reward(spec, c);
        }
        best = best.max(ret);
    }
    best
}

/// Random 3x3, horizon-4 instance. Every number is a short dyadic fraction
/// so all sums are exact in binary floating point.
pub fn battery_instance(seed: u64) -> GridworldSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_features = 2;
    let feature_grid: Vec<Vec<f64>> = (0..9)
        .map(|_| (0..num_features).map(|_| rng.gen_range(0..=8) as f64 / 8.0).collect())
        .collect();
    let gt_weights = (0..num_features).map(|_| [-1.0, -0.5, 0.0, 0.5, 1.0][rng.gen_range(0..5)]).collect();
    let start = Cell::new(rng.gen_range(0..3), rng.gen_range(0..3));
    let mut terminal_cells = Vec::new();
    if rng.gen_bool(0.5) {
        let t = Cell::new(rng.gen_range(0..3), rng.gen_range(0..3));
        if t != start {
            terminal_cells.push(t);
        }
    }
    GridworldSpec {
        name: format!("battery-{seed}"),
        width: 3,
        height: 3,
        num_features,
        feature_grid,
        gt_weights,
        start_cells: vec![start],
        terminal_cells,
        horizon: 4,
        slip_prob: [0.0, 0.3125, 0.625][(seed % 3) as usize],
    }
}

pub const BATTERY_SIZE: u64 = 30;
