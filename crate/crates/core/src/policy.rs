//! Planning and learning on a supplied reward: value iteration, tabular
//! Q-learning, a cloning baseline, and Monte-Carlo evaluation.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{rollout_with, Action, Cell, GridworldSpec, Policy, Trajectory, NUM_ACTIONS};
use crate::error::{contract, invalid, Error, Result};
use crate::kv::KvDoc;

pub const POLICY_SCHEMA: &str = "trex-policy/1";

type Dist = [f64; NUM_ACTIONS];

fn one_hot(a: Action) -> Dist {
    let mut p = [0.0; NUM_ACTIONS];
    p[a.index()] = 1.0;
    p
}

/// Per-cell action distributions, optionally indexed by time step.
///
/// A policy with one layer is stationary. With several layers, layer `t` is
/// used at step `t` and the last layer for any later step.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularPolicy {
    pub width: usize,
    pub height: usize,
    layers: Vec<Vec<Dist>>,
}

impl TabularPolicy {
    pub fn new(width: usize, height: usize, layers: Vec<Vec<Dist>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid!("policy needs at least one layer"));
        }
        for layer in &layers {
            if layer.len() != width * height {
                return Err(invalid!("policy layer has {} cells, expected {}", layer.len(), width * height));
            }
            for d in layer {
                let total: f64 = d.iter().sum();
                if d.iter().any(|p| *p < 0.0 || !p.is_finite()) || (total - 1.0).abs() > 1e-9 {
                    return Err(invalid!("action distribution {d:?} does not sum to 1"));
                }
            }
        }
        Ok(TabularPolicy { width, height, layers })
    }

    pub fn uniform(spec: &GridworldSpec) -> Self {
        TabularPolicy {
            width: spec.width,
            height: spec.height,
            layers: vec![vec![[1.0 / NUM_ACTIONS as f64; NUM_ACTIONS]; spec.num_cells()]],
        }
    }

    pub fn greedy(spec: &GridworldSpec, actions: &[Action]) -> Self {
        TabularPolicy {
            width: spec.width,
            height: spec.height,
            layers: vec![actions.iter().map(|a| one_hot(*a)).collect()],
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn is_stationary(&self) -> bool {
        self.layers.len() == 1
    }

    fn layer(&self, t: usize) -> &[Dist] {
        &self.layers[t.min(self.layers.len() - 1)]
    }

    /// The most likely action at `(cell, t)`; ties go to the earlier action.
    pub fn greedy_action(&self, cell: Cell, t: usize) -> Action {
        let d = &self.layer(t)[cell.y * self.width + cell.x];
        let mut best = 0;
        for i in 1..NUM_ACTIONS {
            if d[i] > d[best] {
                best = i;
            }
        }
        Action::ALL[best]
    }
}

impl Policy for TabularPolicy {
    fn action_probs(&self, cell: Cell, t: usize) -> Dist {
        self.layer(t)[cell.y * self.width + cell.x]
    }
}

/// Greedy action per cell with uniform exploration mass `epsilon`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpsGreedyPolicy {
    pub width: usize,
    pub greedy: Vec<Action>,
    pub epsilon: f64,
}

impl Policy for EpsGreedyPolicy {
    fn action_probs(&self, cell: Cell, _: usize) -> Dist {
        let mut p = [self.epsilon / NUM_ACTIONS as f64; NUM_ACTIONS];
        p[self.greedy[cell.y * self.width + cell.x].index()] += 1.0 - self.epsilon;
        p
    }
}

impl EpsGreedyPolicy {
    pub fn to_tabular(&self, spec: &GridworldSpec) -> TabularPolicy {
        TabularPolicy {
            width: spec.width,
            height: spec.height,
            layers: vec![spec.cells().map(|c| self.action_probs(c, 0)).collect()],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PlanHorizon {
    /// Backward induction over the spec's episode horizon; yields a time-indexed policy.
    Episode,
    /// Stationary discounted values iterated to a fixed point.
    Infinite,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanConfig {
    pub gamma: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub horizon: PlanHorizon,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            gamma: 1.0,
            tolerance: 1e-10,
            max_iterations: 100_000,
            horizon: PlanHorizon::Episode,
        }
    }
}

impl PlanConfig {
    pub fn discounted(gamma: f64) -> Self {
        PlanConfig {
            gamma,
            horizon: PlanHorizon::Infinite,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct Plan {
    pub policy: TabularPolicy,
    /// Values per policy layer, `[t][cell]`. Index 0 is the value at episode start.
    pub values: Vec<Vec<f64>>,
    pub iterations: usize,
    pub residual: f64,
}

fn near_tie_pick(q: &Dist) -> (Action, f64) {
    let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-12 * best.abs().max(1.0);
    let idx = q.iter().position(|v| *v >= best - tol).unwrap_or(0);
    (Action::ALL[idx], best)
}

fn q_values(
    spec: &GridworldSpec,
    rewards: &[f64],
    gamma: f64,
    next_values: &[f64],
    cell: Cell,
) -> Dist {
    let mut q = [0.0; NUM_ACTIONS];
    for a in Action::ALL {
        q[a.index()] = spec
            .successors(cell, a)
            .into_iter()
            .map(|(next, p)| {
                let i = spec.cell_index(next);
                let cont = if spec.is_terminal(next) { 0.0 } else { next_values[i] };
                p * (rewards[i] + gamma * cont)
            })
            .sum();
    }
    q
}

/// One synchronous Bellman optimality sweep. Terminal cells keep value 0.
pub fn bellman_sweep(spec: &GridworldSpec, rewards: &[f64], gamma: f64, values: &[f64]) -> Vec<f64> {
    spec.cells()
        .map(|cell| {
            if spec.is_terminal(cell) {
                0.0
            } else {
                near_tie_pick(&q_values(spec, rewards, gamma, values, cell)).1
            }
        })
        .collect()
}

pub fn reward_table(spec: &GridworldSpec, reward_fn: impl Fn(Cell) -> f64) -> Vec<f64> {
    spec.cells().map(reward_fn).collect()
}

/// Plans greedily against `reward_fn` (reward for entering a cell).
///
/// Ties between actions go to the earlier action in `up, down, left, right, stay`.
pub fn value_iteration(
    spec: &GridworldSpec,
    reward_fn: impl Fn(Cell) -> f64,
    cfg: &PlanConfig,
) -> Result<Plan> {
    if !(cfg.gamma > 0.0 && cfg.gamma <= 1.0) {
        return Err(contract!("planning discount must lie in (0,1], got {}", cfg.gamma));
    }
    if !(cfg.tolerance > 0.0) {
        return Err(contract!("stopping tolerance must be positive"));
    }
    let rewards = reward_table(spec, reward_fn);
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(invalid!("reward function returned a non-finite value"));
    }
    let n = spec.num_cells();
    let greedy_layer = |values: &[f64]| -> Vec<Dist> {
        spec.cells()
            .map(|cell| {
                if spec.is_terminal(cell) {
                    one_hot(Action::Up)
                } else {
                    one_hot(near_tie_pick(&q_values(spec, &rewards, cfg.gamma, values, cell)).0)
                }
            })
            .collect()
    };
    match cfg.horizon {
        PlanHorizon::Episode => {
            let horizon = spec.horizon;
            let mut values = vec![vec![0.0; n]; horizon + 1];
            let mut layers = vec![Vec::new(); horizon];
            for t in (0..horizon).rev() {
                values[t] = bellman_sweep(spec, &rewards, cfg.gamma, &values[t + 1]);
                layers[t] = greedy_layer(&values[t + 1]);
            }
            values.truncate(horizon);
            Ok(Plan {
                policy: TabularPolicy { width: spec.width, height: spec.height, layers },
                values,
                iterations: horizon,
                residual: 0.0,
            })
        }
        PlanHorizon::Infinite => {
            if cfg.gamma >= 1.0 && spec.terminal_cells.is_empty() {
                return Err(contract!("undiscounted planning needs a reachable terminal cell"));
            }
            let mut values = vec![0.0; n];
            let mut residual = f64::INFINITY;
            for iteration in 1..=cfg.max_iterations {
                let next = bellman_sweep(spec, &rewards, cfg.gamma, &values);
                residual = next
                    .iter()
                    .zip(&values)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                values = next;
                if residual <= cfg.tolerance {
                    let layer = greedy_layer(&values);
                    return Ok(Plan {
                        policy: TabularPolicy { width: spec.width, height: spec.height, layers: vec![layer] },
                        values: vec![values],
                        iterations: iteration,
                        residual,
                    });
                }
            }
            Err(Error::NoConvergence {
                iterations: cfg.max_iterations,
                residual,
            })
        }
    }
}

/// Exact expected return of a policy from the start distribution.
pub fn exact_return(spec: &GridworldSpec, policy: &impl Policy) -> f64 {
    let n = spec.num_cells();
    let mut dist = vec![0.0; n];
    for s in &spec.start_cells {
        dist[spec.cell_index(*s)] += 1.0 / spec.start_cells.len() as f64;
    }
    let mut total = 0.0;
    for t in 0..spec.horizon {
        let mut next = vec![0.0; n];
        for (i, &mass) in dist.iter().enumerate() {
            let cell = spec.cell_at(i);
            if mass == 0.0 || spec.is_terminal(cell) {
                continue;
            }
            let probs = policy.action_probs(cell, t);
            for a in Action::ALL {
                let pa = probs[a.index()];
                if pa == 0.0 {
                    continue;
                }
                for (succ, p) in spec.successors(cell, a) {
                    let j = spec.cell_index(succ);
                    let m = mass * pa * p;
                    total += m * crate::env::gt_reward_of(spec, &spec.feature_grid[j]);
                    next[j] += m;
                }
            }
        }
        dist = next;
    }
    total
}

/// Tabular Q-learning settings. `total_updates` counts environment steps.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnerConfig {
    pub total_updates: usize,
    pub checkpoint_every: usize,
    pub lr: f64,
    pub gamma: f64,
    pub eps_start: f64,
    pub eps_end: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            total_updates: 22_000,
            checkpoint_every: 2_000,
            lr: 0.1,
            gamma: 0.95,
            eps_start: 1.0,
            eps_end: 0.05,
        }
    }
}

impl LearnerConfig {
    pub fn epsilon_at(&self, update: usize) -> f64 {
        if self.total_updates == 0 {
            return self.eps_start;
        }
        let frac = update as f64 / self.total_updates as f64;
        self.eps_start + (self.eps_end - self.eps_start) * frac.min(1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.checkpoint_every == 0 {
            return Err(contract!("checkpoint cadence must be >= 1"));
        }
        if self.total_updates > 0 && self.checkpoint_every > self.total_updates {
            return Err(contract!(
                "checkpoint cadence {} exceeds total updates {}",
                self.checkpoint_every,
                self.total_updates
            ));
        }
        if !(0.0..=1.0).contains(&self.eps_start) || !(0.0..=1.0).contains(&self.eps_end) {
            return Err(contract!("exploration rates must lie in [0,1]"));
        }
        if !(self.lr > 0.0 && self.lr <= 1.0) || !(0.0..=1.0).contains(&self.gamma) {
            return Err(contract!("learning rate must lie in (0,1] and gamma in [0,1]"));
        }
        Ok(())
    }
}

/// Snapshot of a Q-learner taken at `step` updates.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub policy: EpsGreedyPolicy,
}

fn greedy_actions(q: &[Dist]) -> Vec<Action> {
    q.iter().map(|row| near_tie_pick(row).0).collect()
}

/// Runs Q-learning and snapshots the ε-greedy policy at updates `0, C, 2C, …`
/// and at the final update.
pub fn q_learning_checkpoints(
    spec: &GridworldSpec,
    reward_fn: impl Fn(Cell) -> f64,
    cfg: &LearnerConfig,
    seed: u64,
) -> Result<Vec<Checkpoint>> {
    cfg.validate()?;
    let rewards = reward_table(spec, reward_fn);
    let n = spec.num_cells();
    let mut q = vec![[0.0; NUM_ACTIONS]; n];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checkpoints = Vec::new();
    let snapshot = |q: &[Dist], step: usize| Checkpoint {
        step,
        policy: EpsGreedyPolicy {
            width: spec.width,
            greedy: greedy_actions(q),
            epsilon: cfg.epsilon_at(step),
        },
    };
    let reset = |rng: &mut ChaCha8Rng| spec.start_cells[rng.gen_range(0..spec.start_cells.len())];
    let mut cell = reset(&mut rng);
    let mut t = 0;
    for update in 0..cfg.total_updates {
        if update % cfg.checkpoint_every == 0 {
            checkpoints.push(snapshot(&q, update));
        }
        let eps = cfg.epsilon_at(update);
        let s = spec.cell_index(cell);
        let action = if rng.gen::<f64>() < eps {
            Action::ALL[rng.gen_range(0..NUM_ACTIONS)]
        } else {
            near_tie_pick(&q[s]).0
        };
        let state = crate::env::EnvState { cell, t };
        let next = crate::env::transition(spec, state, action, &mut rng)?;
        let j = spec.cell_index(next.cell);
        let done_env = spec.is_terminal(next.cell);
        let bootstrap = if done_env {
            0.0
        } else {
            q[j].iter().copied().fold(f64::NEG_INFINITY, f64::max)
        };
        let target = rewards[j] + cfg.gamma * bootstrap;
        let qa = &mut q[s][action.index()];
        *qa += cfg.lr * (target - *qa);
        if done_env || next.t >= spec.horizon {
            cell = reset(&mut rng);
            t = 0;
        } else {
            cell = next.cell;
            t = next.t;
        }
    }
    checkpoints.push(snapshot(&q, cfg.total_updates));
    Ok(checkpoints)
}

/// Q-learning on `reward_fn`; returns the final greedy policy.
pub fn q_learning(
    spec: &GridworldSpec,
    reward_fn: impl Fn(Cell) -> f64,
    cfg: &LearnerConfig,
    seed: u64,
) -> Result<TabularPolicy> {
    let cfg = LearnerConfig {
        checkpoint_every: cfg.total_updates.max(1),
        ..cfg.clone()
    };
    let last = q_learning_checkpoints(spec, reward_fn, &cfg, seed)?
        .pop()
        .expect("at least one checkpoint");
    Ok(TabularPolicy::greedy(spec, &last.policy.greedy))
}

/// Behavioural cloning of the highest-return demonstration.
///
/// Visited cells get their majority action; unvisited cells act uniformly.
/// Without recorded actions the moves are inferred from consecutive cells,
/// which is only possible when transitions are deterministic.
pub fn clone_best_demo(spec: &GridworldSpec, demos: &[Trajectory]) -> Result<TabularPolicy> {
    let best = demos
        .iter()
        .max_by(|a, b| a.gt_return.total_cmp(&b.gt_return))
        .ok_or_else(|| contract!("cloning needs at least one demonstration"))?;
    let cells = best.cells(spec)?;
    let actions: Vec<Action> = match &best.actions {
        Some(a) => a.clone(),
        None if spec.slip_prob == 0.0 => cells
            .windows(2)
            .map(|w| {
                if w[0] == w[1] {
                    return Ok(Action::Stay);
                }
                Action::ALL
                    .into_iter()
                    .find(|a| spec.step_cell(w[0], *a) == w[1])
                    .ok_or_else(|| invalid!("no single move leads from {} to {}", w[0], w[1]))
            })
            .collect::<Result<_>>()?,
        None => return Err(contract!("actions required: transitions are stochastic, so moves cannot be inferred")),
    };
    let mut counts = vec![[0usize; NUM_ACTIONS]; spec.num_cells()];
    for (cell, action) in cells.iter().zip(&actions) {
        counts[spec.cell_index(*cell)][action.index()] += 1;
    }
    let layer = counts
        .iter()
        .map(|c| {
            if c.iter().all(|&k| k == 0) {
                return [1.0 / NUM_ACTIONS as f64; NUM_ACTIONS];
            }
            let mut best = 0;
            for i in 1..NUM_ACTIONS {
                if c[i] > c[best] {
                    best = i;
                }
            }
            one_hot(Action::ALL[best])
        })
        .collect();
    Ok(TabularPolicy { width: spec.width, height: spec.height, layers: vec![layer] })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub episodes: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub returns: Vec<f64>,
}

impl EvalStats {
    pub fn from_returns(returns: Vec<f64>) -> Self {
        let n = returns.len();
        let mean = returns.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        EvalStats {
            episodes: n,
            mean,
            std: var.sqrt(),
            min: returns.iter().copied().fold(f64::INFINITY, f64::min),
            max: returns.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            returns,
        }
    }

    /// Half-width of the normal-approximation 95% interval of the mean.
    pub fn ci95(&self) -> f64 {
        1.96 * self.std / (self.episodes as f64).sqrt()
    }

    pub fn to_csv(&self, seed: u64) -> String {
        let mut out = String::from("seed,episode,return\n");
        for (i, r) in self.returns.iter().enumerate() {
            let _ = writeln!(out, "{seed},{i},{r}");
        }
        out
    }
}

/// Seeded rollouts; episode `k` uses its own stream so results do not depend
/// on scheduling.
pub fn evaluate_policy<P: Policy + Sync>(
    spec: &GridworldSpec,
    policy: &P,
    episodes: usize,
    seed: u64,
) -> Result<EvalStats> {
    if episodes == 0 {
        return Err(contract!("evaluation needs at least one episode"));
    }
    let returns: Vec<f64> = (0..episodes)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            rollout_with(spec, policy, &mut rng).gt_return
        })
        .collect();
    Ok(EvalStats::from_returns(returns))
}

fn format_dist(d: &Dist) -> String {
    if let Some(i) = d.iter().position(|p| *p == 1.0) {
        Action::ALL[i].name().to_string()
    } else {
        let parts: Vec<String> = d.iter().map(f64::to_string).collect();
        format!("mix:{}", parts.join("/"))
    }
}

fn parse_dist(s: &str) -> Result<Dist> {
    if let Some(rest) = s.strip_prefix("mix:") {
        let parts: Vec<f64> = rest
            .split('/')
            .map(|p| p.parse::<f64>().map_err(|_| invalid!("bad probability `{p}`")))
            .collect::<Result<_>>()?;
        parts
            .try_into()
            .map_err(|_| invalid!("mixture `{s}` needs {NUM_ACTIONS} probabilities"))
    } else {
        Ok(one_hot(s.parse()?))
    }
}

/// Writes the `state -> action` table with optional values.
///
/// Header lines use the key-value grammar; each row after `table` is
/// `t x y action value`, with `-` for a missing value.
pub fn render_policy(policy: &TabularPolicy, values: Option<&[Vec<f64>]>) -> String {
    let mut head = KvDoc::new(POLICY_SCHEMA);
    head.set("width", policy.width);
    head.set("height", policy.height);
    head.set("layers", policy.layers.len());
    let mut out = head.render();
    out.push_str("table\n");
    for (t, layer) in policy.layers.iter().enumerate() {
        for (i, d) in layer.iter().enumerate() {
            let value = values
                .and_then(|v| v.get(t))
                .and_then(|v| v.get(i))
                .map_or_else(|| "-".to_string(), f64::to_string);
            let _ = writeln!(out, "{t} {} {} {} {value}", i % policy.width, i / policy.width, format_dist(d));
        }
    }
    out
}

pub fn parse_policy(text: &str) -> Result<(TabularPolicy, Option<Vec<Vec<f64>>>)> {
    let (head, table) = text
        .split_once("\ntable\n")
        .ok_or_else(|| invalid!("policy file has no `table` section"))?;
    let head = KvDoc::parse(head)?;
    head.expect_schema(POLICY_SCHEMA)?;
    let width: usize = head.parse_required("width")?;
    let height: usize = head.parse_required("height")?;
    let num_layers: usize = head.parse_required("layers")?;
    let n = width * height;
    let mut layers = vec![vec![[f64::NAN; NUM_ACTIONS]; n]; num_layers];
    let mut values = vec![vec![f64::NAN; n]; num_layers];
    let mut any_value = false;
    let mut rows = 0;
    for line in table.lines().filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 5 {
            return Err(invalid!("policy row `{line}` needs 5 fields"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| invalid!("bad index in row `{line}`"));
        let (t, x, y) = (num(f[0])?, num(f[1])?, num(f[2])?);
        if t >= num_layers || x >= width || y >= height {
            return Err(invalid!("policy row `{line}` out of range"));
        }
        layers[t][y * width + x] = parse_dist(f[3])?;
        if f[4] != "-" {
            values[t][y * width + x] = f[4].parse().map_err(|_| invalid!("bad value in row `{line}`"))?;
            any_value = true;
        }
        rows += 1;
    }
    if rows != n * num_layers {
        return Err(invalid!("policy table has {rows} rows, expected {}", n * num_layers));
    }
    let policy = TabularPolicy::new(width, height, layers)?;
    Ok((policy, any_value.then_some(values)))
}

pub fn save_policy(path: &Path, policy: &TabularPolicy, values: Option<&[Vec<f64>]>) -> Result<()> {
    std::fs::write(path, render_policy(policy, values)).map_err(|e| Error::io(path, e))
}

pub fn load_policy(path: &Path) -> Result<(TabularPolicy, Option<Vec<Vec<f64>>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_policy(&text)
}
