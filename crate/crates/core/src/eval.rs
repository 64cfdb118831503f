//! Analyses: extrapolation scatter, noise sweeps, saliency and summary tables.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demos::{generate_demos, inject_swap_noise, load_demos, swaps_for_correctness, RankedDataset};
use crate::env::{GridworldSpec, Trajectory};
use crate::error::{contract, invalid, Error, Result};
use crate::kv::KvDoc;
use crate::nn::RewardNet;
use crate::policy::{evaluate_policy, value_iteration, Checkpoint, EvalStats, Plan, PlanConfig};
use crate::reward::{ensemble_reward, ensemble_return, squashed_reward, train_reward, Ensemble, TrainConfig};

pub const EXTRAPOLATION_SCHEMA: &str = "trex-extrapolation/1";
pub const EXTRAPOLATION_CSV_HEADER: &str = "id,kind,gt_return,predicted_return,normalized";
pub const SWEEP_CSV_HEADER: &str = "level,mean_correctness,mean_return,ci95,reps";
pub const SWEEP_RUNS_CSV_HEADER: &str = "level,rep,swaps,order_correctness,mean_return";
pub const SUMMARY_CSV_HEADER: &str = "best_demo,average_demo,trex,clone,oracle";

/// Anything that maps an observation to a scalar reward.
pub trait RewardModel {
    fn reward(&self, obs: &[f64]) -> Result<f64>;
}

impl RewardModel for RewardNet {
    fn reward(&self, obs: &[f64]) -> Result<f64> {
        self.forward(obs)
    }
}

impl RewardModel for Ensemble {
    fn reward(&self, obs: &[f64]) -> Result<f64> {
        ensemble_reward(self, obs)
    }
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return f64::NAN;
    }
    (cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0)
}

/// Ranks starting at 1; tied values share their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Least-squares `(scale, offset)` minimizing `sum (scale * x + offset - y)^2`.
///
/// Constant `x` gets scale 0 and the mean of `y`.
pub fn fit_affine(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::Dimension { expected: x.len(), got: y.len() });
    }
    if x.len() < 2 {
        return Err(contract!("affine fit needs at least 2 points, got {}", x.len()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let scale = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    Ok((scale, my - scale * mx))
}

pub fn sum_squared_error(x: &[f64], y: &[f64], scale: f64, offset: f64) -> f64 {
    x.iter().zip(y).map(|(a, b)| (scale * a + offset - b).powi(2)).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationRow {
    pub id: String,
    pub is_demo: bool,
    pub gt_return: f64,
    pub predicted: f64,
    pub normalized: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationReport {
    pub rows: Vec<ExtrapolationRow>,
    pub scale: f64,
    pub offset: f64,
    /// Highest demonstration return; points beyond it are extrapolation.
    pub demo_max: f64,
    /// Coefficients over the held-out rows, or over all rows when there are
    /// fewer than two held-out rows.
    pub pearson: f64,
    pub spearman: f64,
    pub pearson_all: f64,
    pub spearman_all: f64,
}

impl ExtrapolationReport {
    /// Builds the report from `(id, is_demo, gt_return, predicted)` rows.
    pub fn from_predictions(rows: Vec<(String, bool, f64, f64)>) -> Result<Self> {
        let (dx, dy): (Vec<f64>, Vec<f64>) = rows.iter().filter(|r| r.1).map(|r| (r.3, r.2)).unzip();
        if dx.len() < 2 {
            return Err(contract!("extrapolation report needs at least 2 demonstrations, got {}", dx.len()));
        }
        let (scale, offset) = fit_affine(&dx, &dy)?;
        let demo_max = dy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let rows: Vec<ExtrapolationRow> = rows
            .into_iter()
            .map(|(id, is_demo, gt_return, predicted)| ExtrapolationRow {
                id,
                is_demo,
                gt_return,
                predicted,
                normalized: scale * predicted + offset,
            })
            .collect();
        let coeffs = |filter: &dyn Fn(&ExtrapolationRow) -> bool| {
            let (g, p): (Vec<f64>, Vec<f64>) =
                rows.iter().filter(|r| filter(r)).map(|r| (r.gt_return, r.normalized)).unzip();
            (pearson(&g, &p), spearman(&g, &p))
        };
        let (pearson_all, spearman_all) = coeffs(&|_| true);
        let held = rows.iter().filter(|r| !r.is_demo).count();
        let (pearson, spearman) = if held >= 2 { coeffs(&|r| !r.is_demo) } else { (pearson_all, spearman_all) };
        Ok(ExtrapolationReport { rows, scale, offset, demo_max, pearson, spearman, pearson_all, spearman_all })
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{EXTRAPOLATION_CSV_HEADER}\n");
        for r in &self.rows {
            let kind = if r.is_demo { "demo" } else { "held_out" };
            let _ = writeln!(out, "{},{kind},{},{},{}", r.id, r.gt_return, r.predicted, r.normalized);
        }
        out
    }

    /// Fit parameters and coefficients, in the key-value grammar.
    pub fn metadata(&self) -> KvDoc {
        let mut doc = KvDoc::new(EXTRAPOLATION_SCHEMA);
        doc.set("normalization", "affine_least_squares_on_demos");
        doc.set("scale", self.scale);
        doc.set("offset", self.offset);
        doc.set("demo_max", self.demo_max);
        doc.set("pearson", self.pearson);
        doc.set("spearman", self.spearman);
        doc.set("pearson_all", self.pearson_all);
        doc.set("spearman_all", self.spearman_all);
        doc
    }
}

/// Predicted returns of demos and held-out trajectories, normalized by an
/// affine map fitted on the demos alone.
pub fn extrapolation_report(
    ens: &Ensemble,
    spec: &GridworldSpec,
    demos: &[Trajectory],
    held_out: &[Trajectory],
) -> Result<ExtrapolationReport> {
    let mut rows = Vec::with_capacity(demos.len() + held_out.len());
    for (t, is_demo) in demos.iter().map(|t| (t, true)).chain(held_out.iter().map(|t| (t, false))) {
        t.validate(Some(spec))?;
        let predicted = ensemble_return(ens, &t.observations, 1.0)?;
        rows.push((t.id.clone(), is_demo, t.gt_return, predicted));
    }
    ExtrapolationReport::from_predictions(rows)
}

/// Fresh rollouts of every checkpoint, ids prefixed `held-`. The rollout
/// seed is derived from `demo_seed` so it never coincides with the demos'.
pub fn held_out_rollouts(
    spec: &GridworldSpec,
    checkpoints: &[Checkpoint],
    per_checkpoint: usize,
    demo_seed: u64,
) -> Result<Vec<Trajectory>> {
    let mut held = generate_demos(spec, checkpoints, per_checkpoint, demo_seed.wrapping_add(HELD_OUT_SEED_OFFSET))?;
    for t in &mut held {
        t.id = format!("held-{}", t.id);
    }
    Ok(held)
}

pub const HELD_OUT_SEED_OFFSET: u64 = 1000;

/// Held-out trajectories whose return is at most `ratio` times the best demo return.
pub fn cap_held_out(held_out: &[Trajectory], demos: &[Trajectory], ratio: f64) -> Vec<Trajectory> {
    let best = demos.iter().map(|d| d.gt_return).fold(f64::NEG_INFINITY, f64::max);
    held_out.iter().filter(|t| t.gt_return <= ratio * best).cloned().collect()
}

struct CsvPoint {
    is_demo: bool,
    gt: f64,
    normalized: f64,
}

fn parse_extrapolation_csv(csv: &str) -> Result<Vec<CsvPoint>> {
    let mut lines = csv.lines();
    match lines.next() {
        Some(h) if h.trim() == EXTRAPOLATION_CSV_HEADER => {}
        other => {
            return Err(Error::Schema {
                what: "extrapolation csv".into(),
                expected: EXTRAPOLATION_CSV_HEADER.into(),
                found: other.unwrap_or("").into(),
            })
        }
    }
    let mut points = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(invalid!("csv line {}: expected 5 fields, got {}", n + 2, f.len()));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| invalid!("csv line {}: bad number `{s}`", n + 2));
        let is_demo = match f[1] {
            "demo" => true,
            "held_out" => false,
            k => return Err(invalid!("csv line {}: unknown kind `{k}`", n + 2)),
        };
        points.push(CsvPoint { is_demo, gt: num(f[2])?, normalized: num(f[4])? });
    }
    Ok(points)
}

/// Scatter of normalized prediction against true return.
///
/// The identity line is solid across the demonstration range and dashed
/// beyond it. Output depends only on the CSV text.
pub fn scatter_svg(csv: &str) -> Result<String> {
    let points = parse_extrapolation_csv(csv)?;
    if points.is_empty() {
        return Err(invalid!("extrapolation csv has no rows"));
    }
    let demo_max = points.iter().filter(|p| p.is_demo).map(|p| p.gt).fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in &points {
        lo = lo.min(p.gt).min(p.normalized);
        hi = hi.max(p.gt).max(p.normalized);
    }
    if hi - lo < 1e-9 {
        hi = lo + 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let (w, h, m) = (480.0, 400.0, 50.0);
    let sx = |v: f64| m + (v - lo) / (hi - lo) * (w - 2.0 * m);
    let sy = |v: f64| h - m - (v - lo) / (hi - lo) * (h - 2.0 * m);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{m}" y="{m}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        w - 2.0 * m,
        h - 2.0 * m
    );
    if demo_max.is_finite() {
        let split = demo_max.clamp(lo, hi);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-width="1.5"/>"#,
            sx(lo),
            sy(lo),
            sx(split),
            sy(split)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-width="1.5" stroke-dasharray="6 4"/>"#,
            sx(split),
            sy(split),
            sx(hi),
            sy(hi)
        );
    } else {
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-width="1.5" stroke-dasharray="6 4"/>"#,
            sx(lo),
            sy(lo),
            sx(hi),
            sy(hi)
        );
    }
    for p in &points {
        let color = if p.is_demo { "#d62728" } else { "#1f77b4" };
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}"/>"#, sx(p.gt), sy(p.normalized));
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">ground-truth return</text>"#,
        w / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.2})">normalized predicted return</text>"#,
        h / 2.0,
        h / 2.0
    );
    let _ = writeln!(s, r#"<text x="{m}" y="{:.2}" font-size="10">{lo:.2}</text>"#, h - m + 14.0);
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{hi:.2}</text>"#, w - m, h - m + 14.0);
    s.push_str("</svg>\n");
    Ok(s)
}

/// What one T-REX run produced: the learned reward, the plan on it and its
/// true-reward evaluation.
#[derive(Clone, Debug)]
pub struct PipelineResult {
    pub ensemble: Ensemble,
    pub plan: Plan,
    pub stats: EvalStats,
}

/// train_reward, then VI on the squashed ensemble reward, then evaluation.
pub fn run_pipeline(
    spec: &GridworldSpec,
    dataset: &RankedDataset,
    train: &TrainConfig,
    plan: &PlanConfig,
    episodes: usize,
    eval_seed: u64,
) -> Result<PipelineResult> {
    let ensemble = train_reward(dataset, train)?;
    let rewards: Vec<f64> = spec
        .cells()
        .map(|c| squashed_reward(&ensemble, spec.features(c)?))
        .collect::<Result<_>>()?;
    let plan = value_iteration(spec, |c| rewards[spec.cell_index(c)], plan)?;
    let stats = evaluate_policy(spec, &plan.policy, episodes, eval_seed)?;
    Ok(PipelineResult { ensemble, plan, stats })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSweepConfig {
    /// Target order-correctness levels.
    pub levels: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    pub train: TrainConfig,
    pub plan: PlanConfig,
    pub episodes: usize,
    pub max_swaps: usize,
}

impl Default for NoiseSweepConfig {
    fn default() -> Self {
        NoiseSweepConfig {
            levels: vec![1.0, 0.95, 0.85, 0.7, 0.5],
            reps: 9,
            seed: 0,
            train: TrainConfig::default(),
            plan: PlanConfig::default(),
            episodes: 100,
            max_swaps: 100_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub level: f64,
    pub rep: usize,
    pub swaps: usize,
    pub order_correctness: f64,
    pub mean_return: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepLevel {
    pub level: f64,
    pub mean_correctness: f64,
    pub mean_return: f64,
    /// Half-width: 1.96 * std / sqrt(reps).
    pub ci95: f64,
    pub reps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSweep {
    pub runs: Vec<SweepRun>,
    pub levels: Vec<SweepLevel>,
}

impl NoiseSweep {
    pub fn level(&self, level: f64) -> Option<&SweepLevel> {
        self.levels.iter().find(|l| l.level == level)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{SWEEP_CSV_HEADER}\n");
        for l in &self.levels {
            let _ = writeln!(out, "{},{},{},{},{}", l.level, l.mean_correctness, l.mean_return, l.ci95, l.reps);
        }
        out
    }

    pub fn runs_csv(&self) -> String {
        let mut out = format!("{SWEEP_RUNS_CSV_HEADER}\n");
        for r in &self.runs {
            let _ = writeln!(out, "{},{},{},{},{}", r.level, r.rep, r.swaps, r.order_correctness, r.mean_return);
        }
        out
    }
}

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xd1b5_4a32_d192_ed03);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Corrupt, retrain, re-plan and evaluate at every level, `reps` times.
///
/// Repetition `r` trains with seed `train.seed + r` at every level, so the
/// level-1.0 runs coincide with the noise-free pipeline.
pub fn noise_sweep(spec: &GridworldSpec, sorted_demos: &[Trajectory], cfg: &NoiseSweepConfig) -> Result<NoiseSweep> {
    if cfg.reps < 2 {
        return Err(contract!("noise sweep needs at least 2 repetitions, got {}", cfg.reps));
    }
    if let Some(l) = cfg.levels.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(contract!("noise level {l} outside [0, 1]"));
    }
    let jobs: Vec<(usize, usize)> =
        (0..cfg.levels.len()).flat_map(|li| (0..cfg.reps).map(move |r| (li, r))).collect();
    let runs: Vec<SweepRun> = jobs
        .par_iter()
        .map(|&(li, rep)| {
            let level = cfg.levels[li];
            let noise_seed = mix_seed(cfg.seed, li as u64, rep as u64);
            let swaps = swaps_for_correctness(sorted_demos, level, noise_seed, cfg.max_swaps)?;
            let ds = inject_swap_noise(sorted_demos, swaps as i64, noise_seed)?;
            let train = TrainConfig { seed: cfg.train.seed.wrapping_add(rep as u64), ..cfg.train.clone() };
            let res = run_pipeline(spec, &ds, &train, &cfg.plan, cfg.episodes, cfg.seed.wrapping_add(rep as u64))?;
            Ok(SweepRun { level, rep, swaps, order_correctness: ds.order_correctness, mean_return: res.stats.mean })
        })
        .collect::<Result<_>>()?;
    let levels = cfg
        .levels
        .iter()
        .map(|&level| {
            let rs: Vec<&SweepRun> = runs.iter().filter(|r| r.level == level).collect();
            let stats = EvalStats::from_returns(rs.iter().map(|r| r.mean_return).collect());
            SweepLevel {
                level,
                mean_correctness: rs.iter().map(|r| r.order_correctness).sum::<f64>() / rs.len() as f64,
                mean_return: stats.mean,
                ci95: stats.ci95(),
                reps: rs.len(),
            }
        })
        .collect();
    Ok(NoiseSweep { runs, levels })
}

/// `|r(s) - r(s with feature f set to 0)|` for every feature.
pub fn saliency(model: &impl RewardModel, obs: &[f64]) -> Result<Vec<f64>> {
    let base = model.reward(obs)?;
    let mut masked = obs.to_vec();
    let mut out = Vec::with_capacity(obs.len());
    for f in 0..obs.len() {
        let keep = masked[f];
        masked[f] = 0.0;
        out.push((base - model.reward(&masked)?).abs());
        masked[f] = keep;
    }
    Ok(out)
}

/// An observation located inside a trajectory set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Located {
    pub trajectory: usize,
    pub t: usize,
    pub reward: f64,
    pub observation: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyReport {
    /// Attribution averaged over every observation.
    pub mean_attribution: Vec<f64>,
    pub argmax: Located,
    pub argmin: Located,
}

impl SaliencyReport {
    /// Feature indices by decreasing mean attribution.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.mean_attribution.len()).collect();
        idx.sort_by(|&a, &b| self.mean_attribution[b].total_cmp(&self.mean_attribution[a]));
        idx
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature,mean_attribution\n");
        for (f, a) in self.mean_attribution.iter().enumerate() {
            let _ = writeln!(out, "{f},{a}");
        }
        out
    }
}

/// Mean attributions over all observations plus the highest- and
/// lowest-reward observations. Ties keep the earliest.
pub fn saliency_report(model: &impl RewardModel, trajectories: &[Trajectory]) -> Result<SaliencyReport> {
    let mut sum: Vec<f64> = Vec::new();
    let mut count = 0usize;
    let mut best: Option<Located> = None;
    let mut worst: Option<Located> = None;
    for (i, traj) in trajectories.iter().enumerate() {
        for (t, obs) in traj.observations.iter().enumerate() {
            let a = saliency(model, obs)?;
            if sum.is_empty() {
                sum = vec![0.0; a.len()];
            } else if sum.len() != a.len() {
                return Err(Error::Dimension { expected: sum.len(), got: a.len() });
            }
            for (s, v) in sum.iter_mut().zip(&a) {
                *s += v;
            }
            count += 1;
            let reward = model.reward(obs)?;
            let here = || Located { trajectory: i, t, reward, observation: obs.clone() };
            if best.as_ref().is_none_or(|b| reward > b.reward) {
                best = Some(here());
            }
            if worst.as_ref().is_none_or(|w| reward < w.reward) {
                worst = Some(here());
            }
        }
    }
    match (best, worst) {
        (Some(argmax), Some(argmin)) => Ok(SaliencyReport {
            mean_attribution: sum.iter().map(|s| s / count as f64).collect(),
            argmax,
            argmin,
        }),
        _ => Err(contract!("saliency report needs at least one observation")),
    }
}

/// Artifacts that [`summary_table`] reads from a run directory.
pub const SUMMARY_INPUTS: [&str; 4] = ["demos.jsonl", "eval_trex.csv", "eval_clone.csv", "eval_oracle.csv"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub best_demo: f64,
    pub average_demo: f64,
    pub trex: f64,
    pub clone: f64,
    pub oracle: f64,
}

impl Summary {
    pub fn to_csv(&self) -> String {
        format!(
            "{SUMMARY_CSV_HEADER}\n{},{},{},{},{}\n",
            self.best_demo, self.average_demo, self.trex, self.clone, self.oracle
        )
    }

    pub fn to_text(&self) -> String {
        let cols = [
            ("best demo", self.best_demo),
            ("average demo", self.average_demo),
            ("T-REX", self.trex),
            ("clone", self.clone),
            ("oracle VI", self.oracle),
        ];
        let mut out = String::new();
        for (name, v) in cols {
            let _ = writeln!(out, "{name:<14}{v:>10.3}");
        }
        out
    }
}

/// Mean return column of a `seed,episode,return` evaluation CSV.
pub fn read_eval_csv(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("seed,episode,return") {
        return Err(Error::Schema {
            what: path.display().to_string(),
            expected: "seed,episode,return".into(),
            found: text.lines().next().unwrap_or("").into(),
        });
    }
    let returns: Vec<f64> = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.rsplit(',')
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| invalid!("{}: bad row `{l}`", path.display()))
        })
        .collect::<Result<_>>()?;
    if returns.is_empty() {
        return Err(invalid!("{}: no evaluation rows", path.display()));
    }
    Ok(returns)
}

/// Best demo, average demo, T-REX, clone and oracle returns for a run
/// directory holding [`SUMMARY_INPUTS`].
pub fn summary_table(run_dir: &Path) -> Result<Summary> {
    for name in SUMMARY_INPUTS {
        let p = run_dir.join(name);
        if !p.exists() {
            return Err(Error::MissingArtifact(p));
        }
    }
    let demos = load_demos(&run_dir.join("demos.jsonl"), None)?;
    if demos.is_empty() {
        return Err(invalid!("{}: no demonstrations", run_dir.join("demos.jsonl").display()));
    }
    let mean = |name: &str| -> Result<f64> {
        let r = read_eval_csv(&run_dir.join(name))?;
        Ok(r.iter().sum::<f64>() / r.len() as f64)
    };
    Ok(Summary {
        best_demo: demos.iter().map(|d| d.gt_return).fold(f64::NEG_INFINITY, f64::max),
        average_demo: demos.iter().map(|d| d.gt_return).sum::<f64>() / demos.len() as f64,
        trex: mean("eval_trex.csv")?,
        clone: mean("eval_clone.csv")?,
        oracle: mean("eval_oracle.csv")?,
    })
}
