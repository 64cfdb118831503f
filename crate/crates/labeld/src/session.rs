use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use trex_core::demos::{Vote, VoteRecord};
use trex_core::env::{GridworldSpec, Trajectory};

pub const VOTE_LOG_SCHEMA: &str = "trex-votelog/1";
pub const DEFAULT_TARGET_VOTES: usize = 6;

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("unknown pair `{0}`")]
    UnknownPair(String),
    #[error("{0}")]
    Invalid(String),
    #[error("vote log {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] trex_core::Error),
}

impl SessionError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        SessionError::Io { path: path.to_path_buf(), source }
    }
}

/// A rater's answer about the pair as it was shown.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    ABetter,
    BBetter,
    NotSure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajView {
    pub id: String,
    pub cells: Vec<[usize; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub start_cells: Vec<[usize; 2]>,
    pub terminal_cells: Vec<[usize; 2]>,
}

/// One pair as served: `a` is drawn on the left.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Presentation {
    pub pair_id: String,
    pub left: usize,
    pub right: usize,
}

/// One line of the vote log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub timestamp_ms: u64,
    pub left: usize,
    pub right: usize,
    pub choice: Choice,
    pub surplus: bool,
}

#[derive(Serialize, Deserialize)]
struct LogHeader {
    schema: String,
    dataset: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoteAck {
    pub accepted: bool,
    pub surplus: bool,
    pub votes: usize,
    pub retired: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub dataset: String,
    pub trajectories: usize,
    pub pairs: usize,
    pub retired: usize,
    pub votes: usize,
    pub target: usize,
}

fn cell_pairs(cells: impl IntoIterator<Item = trex_core::env::Cell>) -> Vec<[usize; 2]> {
    cells.into_iter().map(|c| [c.x, c.y]).collect()
}

pub fn pair_id(left: usize, right: usize) -> String {
    format!("{left}-{right}")
}

/// All unordered pairs, with presentation order and counts.
pub struct LabelSession {
    dataset: String,
    grid: Grid,
    trajectories: Vec<TrajView>,
    target: usize,
    seed: u64,
    queue: Vec<(usize, usize)>,
    position: HashMap<(usize, usize), usize>,
    counts: Vec<usize>,
    log: Vec<LogEntry>,
    writer: Option<(PathBuf, File)>,
}

impl LabelSession {
    pub fn new(
        dataset: impl Into<String>,
        spec: &GridworldSpec,
        demos: &[Trajectory],
        seed: u64,
        target: usize,
    ) -> Result<Self, SessionError> {
        if demos.len() < 2 {
            return Err(SessionError::Invalid(format!("need at least 2 trajectories, got {}", demos.len())));
        }
        if target == 0 {
            return Err(SessionError::Invalid("target votes per pair must be >= 1".into()));
        }
        let trajectories = demos
            .iter()
            .map(|t| Ok(TrajView { id: t.id.clone(), cells: cell_pairs(t.cells(spec)?) }))
            .collect::<Result<Vec<_>, SessionError>>()?;
        let n = demos.len();
        let mut queue: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        queue.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let position = queue.iter().enumerate().map(|(k, p)| (*p, k)).collect();
        let counts = vec![0; queue.len()];
        Ok(LabelSession {
            dataset: dataset.into(),
            grid: Grid {
                width: spec.width,
                height: spec.height,
                start_cells: cell_pairs(spec.start_cells.iter().copied()),
                terminal_cells: cell_pairs(spec.terminal_cells.iter().copied()),
            },
            trajectories,
            target,
            seed,
            queue,
            position,
            counts,
            log: Vec::new(),
            writer: None,
        })
    }

    /// Replays an existing log at `path` and appends every later vote to it.
    pub fn with_log(mut self, path: &Path) -> Result<Self, SessionError> {
        if path.exists() {
            let file = File::open(path).map_err(|e| SessionError::io(path, e))?;
            let mut lines = BufReader::new(file).lines();
            let header: LogHeader = match lines.next() {
                Some(l) => serde_json::from_str(&l.map_err(|e| SessionError::io(path, e))?)
                    .map_err(|e| SessionError::Invalid(format!("{}: bad header: {e}", path.display())))?,
                None => return self.start_log(path),
            };
            if header.schema != VOTE_LOG_SCHEMA {
                return Err(SessionError::Invalid(format!(
                    "{}: schema {} (expected {VOTE_LOG_SCHEMA})",
                    path.display(),
                    header.schema
                )));
            }
            if header.dataset != self.dataset {
                return Err(SessionError::Invalid(format!(
                    "{}: log belongs to dataset {}, not {}",
                    path.display(),
                    header.dataset,
                    self.dataset
                )));
            }
            for (n, line) in lines.enumerate() {
                let line = line.map_err(|e| SessionError::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: LogEntry = serde_json::from_str(&line)
                    .map_err(|e| SessionError::Invalid(format!("{}: line {}: {e}", path.display(), n + 2)))?;
                let k = self.pair_index(entry.left, entry.right).ok_or_else(|| {
                    SessionError::Invalid(format!("{}: line {}: pair out of range", path.display(), n + 2))
                })?;
                self.counts[k] += 1;
                self.log.push(entry);
            }
            let file = OpenOptions::new().append(true).open(path).map_err(|e| SessionError::io(path, e))?;
            self.writer = Some((path.to_path_buf(), file));
            Ok(self)
        } else {
            self.start_log(path)
        }
    }

    fn start_log(mut self, path: &Path) -> Result<Self, SessionError> {
        let mut file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)
            .map_err(|e| SessionError::io(path, e))?;
        let header = LogHeader { schema: VOTE_LOG_SCHEMA.into(), dataset: self.dataset.clone() };
        writeln!(file, "{}", serde_json::to_string(&header).expect("header serializes"))
            .and_then(|_| file.sync_data())
            .map_err(|e| SessionError::io(path, e))?;
        self.writer = Some((path.to_path_buf(), file));
        Ok(self)
    }

    fn pair_index(&self, a: usize, b: usize) -> Option<usize> {
        self.position.get(&(a.min(b), a.max(b))).copied()
    }

    pub fn dataset(&self) -> &str {
        &self.dataset
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn trajectory(&self, i: usize) -> Option<&TrajView> {
        self.trajectories.get(i)
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    /// The unretired pair with the fewest votes, earliest in the shuffled
    /// queue. Nothing is consumed until a vote arrives.
    pub fn next_pair(&self) -> Option<Presentation> {
        let k = (0..self.queue.len())
            .filter(|&k| self.counts[k] < self.target)
            .min_by_key(|&k| self.counts[k])?;
        let (i, j) = self.queue[k];
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x6c72_7369_6465);
        rng.set_stream((k * self.target + self.counts[k]) as u64);
        let (left, right) = if rng.gen::<bool>() { (j, i) } else { (i, j) };
        Some(Presentation { pair_id: pair_id(left, right), left, right })
    }

    pub fn parse_pair_id(&self, id: &str) -> Result<(usize, usize), SessionError> {
        let unknown = || SessionError::UnknownPair(id.to_string());
        let (a, b) = id.split_once('-').ok_or_else(unknown)?;
        let a: usize = a.parse().map_err(|_| unknown())?;
        let b: usize = b.parse().map_err(|_| unknown())?;
        self.pair_index(a, b).ok_or_else(unknown)?;
        Ok((a, b))
    }

    /// Durably appends a vote before acknowledging it. Votes on retired pairs
    /// are stored but flagged as surplus.
    pub fn vote(&mut self, pair_id: &str, choice: Choice) -> Result<VoteAck, SessionError> {
        let (left, right) = self.parse_pair_id(pair_id)?;
        let k = self.pair_index(left, right).expect("checked by parse_pair_id");
        let surplus = self.counts[k] >= self.target;
        let timestamp_ms = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0);
        let entry = LogEntry { seq: self.log.len() as u64, timestamp_ms, left, right, choice, surplus };
        if let Some((path, file)) = self.writer.as_mut() {
            let line = serde_json::to_string(&entry).expect("log entry serializes");
            writeln!(file, "{line}").and_then(|_| file.sync_data()).map_err(|e| SessionError::io(path, e))?;
        }
        self.counts[k] += 1;
        self.log.push(entry);
        Ok(VoteAck { accepted: true, surplus, votes: self.counts[k], retired: self.counts[k] >= self.target })
    }

    pub fn export(&self) -> Vec<VoteRecord> {
        export_votes(&self.log, self.target)
    }

    pub fn status(&self) -> SessionStatus {
        SessionStatus {
            dataset: self.dataset.clone(),
            trajectories: self.trajectories.len(),
            pairs: self.queue.len(),
            retired: self.counts.iter().filter(|&&c| c >= self.target).count(),
            votes: self.log.len(),
            target: self.target,
        }
    }
}

/// Vote records keyed by `(i, j)` with `i < j`, counting only the first
/// `target` votes per pair in log order.
pub fn export_votes(log: &[LogEntry], target: usize) -> Vec<VoteRecord> {
    let mut by_pair: std::collections::BTreeMap<(usize, usize), Vec<Vote>> = Default::default();
    for e in log {
        let (i, j) = (e.left.min(e.right), e.left.max(e.right));
        let votes = by_pair.entry((i, j)).or_default();
        if votes.len() >= target {
            continue;
        }
        let left_is_i = e.left == i;
        votes.push(match (e.choice, left_is_i) {
            (Choice::NotSure, _) => Vote::NotSure,
            (Choice::ABetter, true) | (Choice::BBetter, false) => Vote::IBetter,
            (Choice::ABetter, false) | (Choice::BBetter, true) => Vote::JBetter,
        });
    }
    by_pair.into_iter().map(|(pair, votes)| VoteRecord { pair, votes }).collect()
}
