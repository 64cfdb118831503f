//! Gridworld MDPs with position-derived features and a hidden linear reward.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, invalid, Error, Result};
use crate::kv::KvDoc;

pub const SPEC_SCHEMA: &str = "trex-spec/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Cell { x, y }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.x, self.y)
    }
}

impl FromStr for Cell {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (x, y) = s
            .split_once(',')
            .ok_or_else(|| invalid!("cell `{s}` is not `x,y`"))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| invalid!("cell `{s}` has a non-integer coordinate"))
        };
        Ok(Cell::new(parse(x)?, parse(y)?))
    }
}

/// The five moves. `y` grows downward, so `Up` decrements it.
///
/// The declaration order is the tie-break order used by planners.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

pub const NUM_ACTIONS: usize = 5;

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] =
        [Action::Up, Action::Down, Action::Left, Action::Right, Action::Stay];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Up => "up",
            Action::Down => "down",
            Action::Left => "left",
            Action::Right => "right",
            Action::Stay => "stay",
        }
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (0, -1),
            Action::Down => (0, 1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
            Action::Stay => (0, 0),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Action::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| invalid!("unknown action `{s}`"))
    }
}

/// A finite gridworld. `feature_grid` is row-major: index `y * width + x`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridworldSpec {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub num_features: usize,
    pub feature_grid: Vec<Vec<f64>>,
    pub gt_weights: Vec<f64>,
    pub start_cells: Vec<Cell>,
    pub terminal_cells: Vec<Cell>,
    pub horizon: usize,
    pub slip_prob: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EnvState {
    pub cell: Cell,
    pub t: usize,
}

impl GridworldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(invalid!("grid must be at least 1x1"));
        }
        if self.num_features < 2 {
            return Err(invalid!("num_features must be >= 2, got {}", self.num_features));
        }
        if self.feature_grid.len() != self.width * self.height {
            return Err(invalid!(
                "feature_grid has {} cells, expected {}",
                self.feature_grid.len(),
                self.width * self.height
            ));
        }
        for (i, phi) in self.feature_grid.iter().enumerate() {
            if phi.len() != self.num_features {
                return Err(invalid!("cell {i} has {} features, expected {}", phi.len(), self.num_features));
            }
            if phi.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(invalid!("cell {i} has a feature outside [0,1]"));
            }
        }
        if self.gt_weights.len() != self.num_features {
            return Err(invalid!("gt_weights has {} entries, expected {}", self.gt_weights.len(), self.num_features));
        }
        if self.gt_weights.iter().any(|w| !w.is_finite()) {
            return Err(invalid!("gt_weights must be finite"));
        }
        if self.start_cells.is_empty() {
            return Err(invalid!("start_cells must be nonempty"));
        }
        for c in self.start_cells.iter().chain(&self.terminal_cells) {
            if !self.in_bounds(*c) {
                return Err(invalid!("cell {c} out of bounds"));
            }
        }
        if let Some(c) = self.start_cells.iter().find(|c| self.terminal_cells.contains(c)) {
            return Err(invalid!("cell {c} is both a start and a terminal cell"));
        }
        if self.horizon < 1 {
            return Err(invalid!("horizon must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.slip_prob) {
            return Err(invalid!("slip_prob must lie in [0,1), got {}", self.slip_prob));
        }
        Ok(())
    }

    pub fn num_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn in_bounds(&self, cell: Cell) -> bool {
        cell.x < self.width && cell.y < self.height
    }

    pub fn cell_index(&self, cell: Cell) -> usize {
        cell.y * self.width + cell.x
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new(index % self.width, index / self.width)
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.num_cells()).map(|i| self.cell_at(i))
    }

    pub fn is_terminal(&self, cell: Cell) -> bool {
        self.terminal_cells.contains(&cell)
    }

    pub fn features(&self, cell: Cell) -> Result<&[f64]> {
        if !self.in_bounds(cell) {
            return Err(contract!("cell {cell} out of bounds for {}x{} grid", self.width, self.height));
        }
        Ok(&self.feature_grid[self.cell_index(cell)])
    }

    /// Cell reached by executing `action` from `cell`; walls make the move a no-op.
    pub fn step_cell(&self, cell: Cell, action: Action) -> Cell {
        let (dx, dy) = action.delta();
        let nx = cell.x as isize + dx;
        let ny = cell.y as isize + dy;
        if nx < 0 || ny < 0 || nx >= self.width as isize || ny >= self.height as isize {
            cell
        } else {
            Cell::new(nx as usize, ny as usize)
        }
    }

    /// Probability of landing in each successor under `action`, merged by cell.
    pub fn successors(&self, cell: Cell, action: Action) -> Vec<(Cell, f64)> {
        let mut out: Vec<(Cell, f64)> = Vec::with_capacity(NUM_ACTIONS);
        let mut add = |c: Cell, p: f64| {
            if p == 0.0 {
                return;
            }
            match out.iter_mut().find(|(o, _)| *o == c) {
                Some(slot) => slot.1 += p,
                None => out.push((c, p)),
            }
        };
        add(self.step_cell(cell, action), 1.0 - self.slip_prob);
        let slip = self.slip_prob / NUM_ACTIONS as f64;
        for a in Action::ALL {
            add(self.step_cell(cell, a), slip);
        }
        out
    }

    /// Locates the unique cell whose feature vector equals `obs` bit for bit.
    pub fn locate(&self, obs: &[f64]) -> Result<Cell> {
        let mut found = None;
        for (i, phi) in self.feature_grid.iter().enumerate() {
            if phi.len() == obs.len() && phi.iter().zip(obs).all(|(a, b)| a.to_bits() == b.to_bits()) {
                if found.is_some() {
                    return Err(invalid!("observation matches more than one cell"));
                }
                found = Some(self.cell_at(i));
            }
        }
        found.ok_or_else(|| invalid!("observation matches no cell"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let doc = KvDoc::load(path)?;
        Self::from_kv(&doc).map_err(|e| match e {
            Error::Invalid(msg) => invalid!("{}: {msg}", path.display()),
            other => other,
        })
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        doc.expect_schema(SPEC_SCHEMA)?;
        let width: usize = doc.parse_required("width")?;
        let height: usize = doc.parse_required("height")?;
        let num_features: usize = doc.parse_required("num_features")?;
        let mut feature_grid = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let key = format!("cell.{x}.{y}");
                let phi: Vec<f64> = doc
                    .parse_list(&key)?
                    .ok_or_else(|| invalid!("missing features for `{key}`"))?;
                feature_grid.push(phi);
            }
        }
        let cells = |key: &str| -> Result<Vec<Cell>> {
            Ok(doc.parse_list::<Cell>(key)?.unwrap_or_default())
        };
        let spec = GridworldSpec {
            name: doc.get("name").unwrap_or("unnamed").to_string(),
            width,
            height,
            num_features,
            feature_grid,
            gt_weights: doc.parse_list("gt_weights")?.ok_or_else(|| invalid!("missing `gt_weights`"))?,
            start_cells: cells("start_cells")?,
            terminal_cells: cells("terminal_cells")?,
            horizon: doc.parse_required("horizon")?,
            slip_prob: doc.parse_required("slip_prob")?,
        };
        let extra: Vec<&str> = doc
            .keys()
            .filter(|k| {
                !matches!(
                    *k,
                    "name" | "width" | "height" | "num_features" | "gt_weights" | "start_cells"
                        | "terminal_cells" | "horizon" | "slip_prob"
                ) && !k.starts_with("cell.")
            })
            .collect();
        if !extra.is_empty() {
            return Err(invalid!("unknown keys: {}", extra.join(", ")));
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_kv(&self) -> KvDoc {
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
        let cells = |v: &[Cell]| v.iter().map(Cell::to_string).collect::<Vec<_>>().join(" ");
        let mut doc = KvDoc::new(SPEC_SCHEMA);
        doc.set("name", &self.name);
        doc.set("width", self.width);
        doc.set("height", self.height);
        doc.set("num_features", self.num_features);
        doc.set("gt_weights", join(&self.gt_weights));
        doc.set("start_cells", cells(&self.start_cells));
        doc.set("terminal_cells", cells(&self.terminal_cells));
        doc.set("horizon", self.horizon);
        doc.set("slip_prob", self.slip_prob);
        for cell in self.cells() {
            doc.set(&format!("cell.{}.{}", cell.x, cell.y), join(&self.feature_grid[self.cell_index(cell)]));
        }
        doc
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_kv().render()).map_err(|e| Error::io(path, e))
    }
}

/// True reward of entering `cell`: `w · φ(cell)`.
pub fn gt_reward(spec: &GridworldSpec, cell: Cell) -> Result<f64> {
    let phi = spec.features(cell)?;
    Ok(phi.iter().zip(&spec.gt_weights).map(|(f, w)| f * w).sum())
}

/// True reward of an observation vector.
pub fn gt_reward_of(spec: &GridworldSpec, obs: &[f64]) -> f64 {
    obs.iter().zip(&spec.gt_weights).map(|(f, w)| f * w).sum()
}

pub fn transition<R: Rng + ?Sized>(
    spec: &GridworldSpec,
    state: EnvState,
    action: Action,
    rng: &mut R,
) -> Result<EnvState> {
    if state.t >= spec.horizon {
        return Err(contract!("step at t={} beyond horizon {}", state.t, spec.horizon));
    }
    if !spec.in_bounds(state.cell) {
        return Err(contract!("state cell {} out of bounds", state.cell));
    }
    if spec.is_terminal(state.cell) {
        return Err(contract!("step from terminal cell {}", state.cell));
    }
    let executed = if spec.slip_prob > 0.0 && rng.gen::<f64>() < spec.slip_prob {
        Action::ALL[rng.gen_range(0..NUM_ACTIONS)]
    } else {
        action
    };
    Ok(EnvState {
        cell: spec.step_cell(state.cell, executed),
        t: state.t + 1,
    })
}

/// A state-to-action-distribution mapping. `t` is the number of steps taken so far.
pub trait Policy {
    fn action_probs(&self, cell: Cell, t: usize) -> [f64; NUM_ACTIONS];
}

impl<P: Policy + ?Sized> Policy for &P {
    fn action_probs(&self, cell: Cell, t: usize) -> [f64; NUM_ACTIONS] {
        (**self).action_probs(cell, t)
    }
}

/// Picks uniformly among all actions.
#[derive(Clone, Copy, Debug, Default)]
pub struct UniformPolicy;

impl Policy for UniformPolicy {
    fn action_probs(&self, _: Cell, _: usize) -> [f64; NUM_ACTIONS] {
        [1.0 / NUM_ACTIONS as f64; NUM_ACTIONS]
    }
}

/// Always the same action.
#[derive(Clone, Copy, Debug)]
pub struct ConstantPolicy(pub Action);

impl Policy for ConstantPolicy {
    fn action_probs(&self, _: Cell, _: usize) -> [f64; NUM_ACTIONS] {
        let mut p = [0.0; NUM_ACTIONS];
        p[self.0.index()] = 1.0;
        p
    }
}

pub(crate) fn sample_action<R: Rng + ?Sized>(probs: &[f64; NUM_ACTIONS], rng: &mut R) -> Action {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Action::ALL[i];
        }
    }
    // rounding left a sliver at the top; take the last action with mass
    let last = probs.iter().rposition(|&p| p > 0.0).unwrap_or(NUM_ACTIONS - 1);
    Action::ALL[last]
}

/// An observed episode. Actions are optional: learning works from observations alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub created_step: u64,
    pub observations: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actions: Option<Vec<Action>>,
    pub gt_return: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn recompute_return(&self, spec: &GridworldSpec) -> f64 {
        self.observations[1..].iter().map(|o| gt_reward_of(spec, o)).sum()
    }

    /// Checks shape invariants, and the stored return when a spec is given.
    pub fn validate(&self, spec: Option<&GridworldSpec>) -> Result<()> {
        if self.observations.len() < 2 {
            return Err(invalid!("trajectory `{}` has fewer than 2 observations", self.id));
        }
        let dim = self.observations[0].len();
        if self.observations.iter().any(|o| o.len() != dim) {
            return Err(invalid!("trajectory `{}` has ragged observations", self.id));
        }
        if let Some(actions) = &self.actions {
            if actions.len() != self.observations.len() - 1 {
                return Err(invalid!(
                    "trajectory `{}` has {} actions for {} observations",
                    self.id,
                    actions.len(),
                    self.observations.len()
                ));
            }
        }
        if let Some(spec) = spec {
            if dim != spec.num_features {
                return Err(Error::Dimension { expected: spec.num_features, got: dim });
            }
            let recomputed = self.recompute_return(spec);
            if (recomputed - self.gt_return).abs() > 1e-9 {
                return Err(invalid!(
                    "trajectory `{}` stores gt_return {} but its observations sum to {recomputed}",
                    self.id,
                    self.gt_return
                ));
            }
        }
        Ok(())
    }

    /// Recovers the visited cells; requires distinct per-cell features.
    pub fn cells(&self, spec: &GridworldSpec) -> Result<Vec<Cell>> {
        self.observations.iter().map(|o| spec.locate(o)).collect()
    }
}

/// Runs one episode with a caller-supplied RNG.
pub fn rollout_with<P: Policy + ?Sized, R: Rng + ?Sized>(
    spec: &GridworldSpec,
    policy: &P,
    rng: &mut R,
) -> Trajectory {
    let start = spec.start_cells[rng.gen_range(0..spec.start_cells.len())];
    let mut state = EnvState { cell: start, t: 0 };
    let mut observations = vec![spec.feature_grid[spec.cell_index(start)].clone()];
    let mut actions = Vec::new();
    let mut gt_return = 0.0;
    while state.t < spec.horizon && !spec.is_terminal(state.cell) {
        let action = sample_action(&policy.action_probs(state.cell, state.t), rng);
        state = transition(spec, state, action, rng).expect("loop guard keeps the step legal");
        let phi = &spec.feature_grid[spec.cell_index(state.cell)];
        gt_return += gt_reward_of(spec, phi);
        observations.push(phi.clone());
        actions.push(action);
    }
    Trajectory {
        id: String::new(),
        created_step: 0,
        observations,
        actions: Some(actions),
        gt_return,
    }
}

/// Runs one seeded episode. Equal `(spec, policy, seed)` give identical trajectories.
pub fn rollout<P: Policy + ?Sized>(spec: &GridworldSpec, policy: &P, seed: u64) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut traj = rollout_with(spec, policy, &mut rng);
    traj.id = format!("rollout-{seed}");
    traj
}
