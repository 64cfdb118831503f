//! Checkpointed demonstrations and the ranked datasets built from them.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{gt_reward, rollout_with, GridworldSpec, Trajectory};
use crate::error::{contract, invalid, Error, Result};
use crate::kv::KvDoc;
use crate::policy::{q_learning_checkpoints, Checkpoint, LearnerConfig};

pub const DEMOS_SCHEMA: &str = "trex-demos/1";
pub const RANKINGS_SCHEMA: &str = "trex-rankings/1";

/// Where a dataset's preferences came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    GroundTruth,
    TimeOrder,
    Human,
    Corrupted { swaps: usize },
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::GroundTruth => f.write_str("ground_truth"),
            Provenance::TimeOrder => f.write_str("time_order"),
            Provenance::Human => f.write_str("human"),
            Provenance::Corrupted { swaps } => write!(f, "corrupted:{swaps}"),
        }
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ground_truth" => Provenance::GroundTruth,
            "time_order" => Provenance::TimeOrder,
            "human" => Provenance::Human,
            other => {
                let swaps = other
                    .strip_prefix("corrupted:")
                    .and_then(|n| n.parse().ok())
                    .ok_or_else(|| invalid!("unknown provenance `{s}`"))?;
                Provenance::Corrupted { swaps }
            }
        })
    }
}

/// Trajectories plus preferences: a pair `(i, j)` means trajectory `i` is worse than `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedDataset {
    pub trajectories: Vec<Trajectory>,
    pub pairs: Vec<(usize, usize)>,
    pub provenance: Provenance,
    pub order_correctness: f64,
}

impl RankedDataset {
    pub fn validate(&self) -> Result<()> {
        let n = self.trajectories.len();
        let mut seen = std::collections::HashSet::new();
        for &(i, j) in &self.pairs {
            if i >= n || j >= n {
                return Err(invalid!("pair ({i},{j}) out of range for {n} trajectories"));
            }
            if i == j {
                return Err(invalid!("self pair ({i},{i})"));
            }
            if seen.contains(&(j, i)) {
                return Err(invalid!("pair ({i},{j}) appears in both orientations"));
            }
            seen.insert((i, j));
        }
        if !(0.0..=1.0).contains(&self.order_correctness) {
            return Err(invalid!("order_correctness {} outside [0,1]", self.order_correctness));
        }
        if self.provenance == Provenance::GroundTruth {
            let t = &self.trajectories;
            if self.pairs.iter().any(|&(i, j)| t[i].gt_return >= t[j].gt_return) {
                return Err(invalid!("ground-truth dataset has a pair against the true returns"));
            }
            if self.order_correctness != 1.0 {
                return Err(invalid!("ground-truth dataset must have order_correctness 1"));
            }
        }
        Ok(())
    }

    /// Fraction of pairs whose orientation agrees with the true returns.
    pub fn pair_accuracy(&self) -> f64 {
        if self.pairs.is_empty() {
            return 1.0;
        }
        let t = &self.trajectories;
        let agree = self
            .pairs
            .iter()
            .filter(|&&(i, j)| t[i].gt_return < t[j].gt_return)
            .count();
        agree as f64 / self.pairs.len() as f64
    }
}

/// Trains a tabular ε-greedy Q-learner on the true reward and snapshots it.
///
/// Returns `ceil(U/C) + 1` checkpoints, the first being the untrained
/// (uniformly random) learner.
pub fn train_demonstrator(spec: &GridworldSpec, cfg: &LearnerConfig, seed: u64) -> Result<Vec<Checkpoint>> {
    q_learning_checkpoints(spec, |c| gt_reward(spec, c).expect("cells come from the spec"), cfg, seed)
}

/// Rolls out each checkpoint `per_checkpoint` times.
pub fn generate_demos(
    spec: &GridworldSpec,
    checkpoints: &[Checkpoint],
    per_checkpoint: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if per_checkpoint == 0 {
        return Err(contract!("per_checkpoint must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut demos = Vec::with_capacity(checkpoints.len() * per_checkpoint);
    for ckpt in checkpoints {
        for k in 0..per_checkpoint {
            let mut traj = rollout_with(spec, &ckpt.policy, &mut rng);
            traj.id = format!("ckpt{:06}-{k}", ckpt.step);
            traj.created_step = ckpt.step as u64;
            demos.push(traj);
        }
    }
    Ok(demos)
}

/// Number of position pairs `a < b` where `values[a] > values[b]`.
fn inversions(values: &[f64]) -> usize {
    let mut count = 0;
    for a in 0..values.len() {
        for b in a + 1..values.len() {
            if values[a] > values[b] {
                count += 1;
            }
        }
    }
    count
}

fn total_pairs(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Correctness of a total order given as trajectory indices from worst to best.
fn correctness_of_order(demos: &[Trajectory], order: &[usize]) -> f64 {
    let returns: Vec<f64> = order.iter().map(|&i| demos[i].gt_return).collect();
    let total = total_pairs(order.len());
    if total == 0 {
        return 1.0;
    }
    1.0 - inversions(&returns) as f64 / total as f64
}

fn pairs_from_order(order: &[usize]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(total_pairs(order.len()));
    for a in 0..order.len() {
        for b in a + 1..order.len() {
            pairs.push((order[a], order[b]));
        }
    }
    pairs
}

/// All pairs with strictly increasing true return; equal returns give no pair.
pub fn rank_by_gt(demos: &[Trajectory]) -> Result<RankedDataset> {
    if demos.len() < 2 {
        return Err(contract!("ranking needs at least 2 demonstrations, got {}", demos.len()));
    }
    let mut pairs = Vec::new();
    for i in 0..demos.len() {
        for j in i + 1..demos.len() {
            let (ri, rj) = (demos[i].gt_return, demos[j].gt_return);
            if ri < rj {
                pairs.push((i, j));
            } else if rj < ri {
                pairs.push((j, i));
            }
        }
    }
    Ok(RankedDataset {
        trajectories: demos.to_vec(),
        pairs,
        provenance: Provenance::GroundTruth,
        order_correctness: 1.0,
    })
}

/// Ranks later-created demonstrations above earlier ones.
pub fn rank_by_time(demos: &[Trajectory]) -> Result<RankedDataset> {
    if demos.len() < 2 {
        return Err(contract!("ranking needs at least 2 demonstrations, got {}", demos.len()));
    }
    let mut order: Vec<usize> = (0..demos.len()).collect();
    order.sort_by_key(|&i| demos[i].created_step);
    if let Some(w) = order.windows(2).find(|w| demos[w[0]].created_step == demos[w[1]].created_step) {
        return Err(contract!(
            "duplicate created_step {} (`{}` and `{}`)",
            demos[w[0]].created_step,
            demos[w[0]].id,
            demos[w[1]].id
        ));
    }
    Ok(RankedDataset {
        trajectories: demos.to_vec(),
        pairs: pairs_from_order(&order),
        provenance: Provenance::TimeOrder,
        order_correctness: correctness_of_order(demos, &order),
    })
}

fn check_sorted(sorted_demos: &[Trajectory]) -> Result<()> {
    if sorted_demos.len() < 2 {
        return Err(contract!("swap noise needs at least 2 demonstrations"));
    }
    if sorted_demos.windows(2).any(|w| w[0].gt_return > w[1].gt_return) {
        return Err(contract!("demonstrations must be sorted by ascending gt_return"));
    }
    Ok(())
}

/// Applies `num_swaps` uniformly random adjacent transpositions to the true
/// order and derives all `C(n,2)` pairs from the result.
///
/// Swap positions are drawn with replacement.
pub fn inject_swap_noise(sorted_demos: &[Trajectory], num_swaps: i64, seed: u64) -> Result<RankedDataset> {
    if num_swaps < 0 {
        return Err(contract!("num_swaps must be >= 0, got {num_swaps}"));
    }
    check_sorted(sorted_demos)?;
    let n = sorted_demos.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..num_swaps {
        let p = rng.gen_range(0..n - 1);
        order.swap(p, p + 1);
    }
    Ok(RankedDataset {
        trajectories: sorted_demos.to_vec(),
        pairs: pairs_from_order(&order),
        provenance: Provenance::Corrupted { swaps: num_swaps as usize },
        order_correctness: correctness_of_order(sorted_demos, &order),
    })
}

/// Smallest swap count whose corrupted order (same seed as
/// [`inject_swap_noise`]) has correctness at or below `target`.
pub fn swaps_for_correctness(sorted_demos: &[Trajectory], target: f64, seed: u64, max_swaps: usize) -> Result<usize> {
    check_sorted(sorted_demos)?;
    let n = sorted_demos.len();
    let returns: Vec<f64> = sorted_demos.iter().map(|t| t.gt_return).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let total = total_pairs(n) as f64;
    let mut inv = 0isize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for swaps in 0..=max_swaps {
        if 1.0 - inv as f64 / total <= target + 1e-12 {
            return Ok(swaps);
        }
        let p = rng.gen_range(0..n - 1);
        let (a, b) = (returns[order[p]], returns[order[p + 1]]);
        if a < b {
            inv += 1;
        } else if a > b {
            inv -= 1;
        }
        order.swap(p, p + 1);
    }
    Err(invalid!("correctness {target} not reached within {max_swaps} swaps"))
}

/// Suboptimality stages: the worst third, the worst half, or everything.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Stage1,
    Stage2,
    Stage3,
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "stage1" => Ok(Stage::Stage1),
            "2" | "stage2" => Ok(Stage::Stage2),
            "3" | "stage3" | "all" => Ok(Stage::Stage3),
            _ => Err(invalid!("unknown stage `{s}` (expected stage1, stage2 or stage3)")),
        }
    }
}

impl Stage {
    pub fn fraction(self) -> f64 {
        match self {
            Stage::Stage1 => 1.0 / 3.0,
            Stage::Stage2 => 0.5,
            Stage::Stage3 => 1.0,
        }
    }

    /// The worst `fraction` of `demos` by true return (at least 2), in their original order.
    pub fn select(self, demos: &[Trajectory]) -> Vec<Trajectory> {
        let keep = ((demos.len() as f64 * self.fraction()).round() as usize)
            .max(2)
            .min(demos.len());
        let mut order: Vec<usize> = (0..demos.len()).collect();
        order.sort_by(|&a, &b| demos[a].gt_return.total_cmp(&demos[b].gt_return).then(a.cmp(&b)));
        let mut chosen: Vec<usize> = order[..keep].to_vec();
        chosen.sort_unstable();
        chosen.into_iter().map(|i| demos[i].clone()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vote {
    IBetter,
    JBetter,
    NotSure,
}

impl Vote {
    fn flipped(self) -> Vote {
        match self {
            Vote::IBetter => Vote::JBetter,
            Vote::JBetter => Vote::IBetter,
            Vote::NotSure => Vote::NotSure,
        }
    }
}

/// Raw human labels for one pair of trajectories.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub pair: (usize, usize),
    pub votes: Vec<Vote>,
}

/// Majority vote per unordered pair. Pairs whose most common label is tied
/// or is `NotSure` are dropped. Records for `(i, j)` and `(j, i)` are pooled.
pub fn aggregate_votes(records: &[VoteRecord]) -> Vec<(usize, usize)> {
    let mut pooled: BTreeMap<(usize, usize), [usize; 3]> = BTreeMap::new();
    for rec in records {
        let (i, j) = rec.pair;
        if i == j {
            continue;
        }
        let counts = pooled.entry((i.min(j), i.max(j))).or_default();
        for &v in &rec.votes {
            let v = if i < j { v } else { v.flipped() };
            counts[v as usize] += 1;
        }
    }
    pooled
        .into_iter()
        .filter_map(|((lo, hi), c)| {
            let top = *c.iter().max()?;
            if top == 0 || c.iter().filter(|&&k| k == top).count() > 1 {
                return None;
            }
            if c[Vote::IBetter as usize] == top {
                Some((hi, lo))
            } else if c[Vote::JBetter as usize] == top {
                Some((lo, hi))
            } else {
                None
            }
        })
        .collect()
}

/// Dataset from aggregated human labels.
pub fn rank_by_votes(demos: &[Trajectory], records: &[VoteRecord]) -> Result<RankedDataset> {
    let pairs = aggregate_votes(records);
    if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i >= demos.len() || j >= demos.len()) {
        return Err(invalid!("vote pair ({i},{j}) out of range for {} demonstrations", demos.len()));
    }
    let mut ds = RankedDataset {
        trajectories: demos.to_vec(),
        pairs,
        provenance: Provenance::Human,
        order_correctness: 1.0,
    };
    ds.order_correctness = ds.pair_accuracy();
    Ok(ds)
}

#[derive(Serialize, Deserialize)]
struct SchemaLine {
    schema: String,
}

pub fn write_demos(writer: &mut impl Write, demos: &[Trajectory]) -> std::io::Result<()> {
    serde_json::to_writer(&mut *writer, &SchemaLine { schema: DEMOS_SCHEMA.into() })?;
    writer.write_all(b"\n")?;
    for d in demos {
        serde_json::to_writer(&mut *writer, d)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_demos(reader: impl BufRead) -> Result<Vec<Trajectory>> {
    let mut lines = reader.lines();
    let first = lines
        .next()
        .ok_or_else(|| invalid!("empty demos file"))?
        .map_err(|e| Error::io("<demos>", e))?;
    let head: SchemaLine = serde_json::from_str(&first).map_err(|_| invalid!("demos file lacks a schema line"))?;
    if head.schema != DEMOS_SCHEMA {
        return Err(Error::Schema { what: "demos".into(), expected: DEMOS_SCHEMA.into(), found: head.schema });
    }
    let mut demos: Vec<Trajectory> = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io("<demos>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let traj: Trajectory =
            serde_json::from_str(&line).map_err(|e| invalid!("demos line {}: {e}", k + 2))?;
        traj.validate(None)?;
        if demos.iter().any(|d| d.id == traj.id) {
            return Err(invalid!("duplicate trajectory id `{}`", traj.id));
        }
        demos.push(traj);
    }
    Ok(demos)
}

pub fn save_demos(path: &Path, demos: &[Trajectory]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    write_demos(&mut file, demos).map_err(|e| Error::io(path, e))?;
    file.flush().map_err(|e| Error::io(path, e))
}

/// Loads demonstrations; with a spec, stored returns are re-checked.
pub fn load_demos(path: &Path, spec: Option<&GridworldSpec>) -> Result<Vec<Trajectory>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let demos = read_demos(BufReader::new(file)).map_err(|e| match e {
        Error::Invalid(m) => invalid!("{}: {m}", path.display()),
        other => other,
    })?;
    if let Some(spec) = spec {
        for d in &demos {
            d.validate(Some(spec))?;
        }
    }
    Ok(demos)
}

/// Rankings file: key-value header, then one `i<j` pair per line.
pub fn render_rankings(ds: &RankedDataset) -> String {
    let mut head = KvDoc::new(RANKINGS_SCHEMA);
    head.set("provenance", ds.provenance);
    head.set("order_correctness", ds.order_correctness);
    head.set("trajectories", ds.trajectories.len());
    head.set("pairs", ds.pairs.len());
    let mut out = head.render();
    for (i, j) in &ds.pairs {
        let _ = writeln!(out, "{i}<{j}");
    }
    out
}

/// Parses a rankings file against the trajectories it indexes.
pub fn parse_rankings(text: &str, trajectories: Vec<Trajectory>) -> Result<RankedDataset> {
    let mut head = String::new();
    let mut pairs = Vec::new();
    for line in text.lines() {
        let l = line.trim();
        if let Some((i, j)) = l.split_once('<') {
            let idx = |s: &str| s.trim().parse::<usize>().map_err(|_| invalid!("bad pair line `{l}`"));
            pairs.push((idx(i)?, idx(j)?));
        } else if pairs.is_empty() {
            head.push_str(line);
            head.push('\n');
        } else if !l.is_empty() {
            return Err(invalid!("unexpected line `{l}` after pairs"));
        }
    }
    let head = KvDoc::parse(&head)?;
    if head.schema != RANKINGS_SCHEMA {
        return Err(Error::Schema { what: "rankings".into(), expected: RANKINGS_SCHEMA.into(), found: head.schema });
    }
    let n: usize = head.parse_required("trajectories")?;
    if n != trajectories.len() {
        return Err(invalid!("rankings index {n} trajectories but {} were supplied", trajectories.len()));
    }
    let declared: usize = head.parse_required("pairs")?;
    if declared != pairs.len() {
        return Err(invalid!("rankings header declares {declared} pairs, found {}", pairs.len()));
    }
    let ds = RankedDataset {
        trajectories,
        pairs,
        provenance: head.parse_required("provenance")?,
        order_correctness: head.parse_required("order_correctness")?,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn save_rankings(path: &Path, ds: &RankedDataset) -> Result<()> {
    std::fs::write(path, render_rankings(ds)).map_err(|e| Error::io(path, e))
}

pub fn load_rankings(path: &Path, trajectories: Vec<Trajectory>) -> Result<RankedDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_rankings(&text, trajectories)
}
