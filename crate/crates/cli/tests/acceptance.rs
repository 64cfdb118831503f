//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion, with
//! indented detail lines, and exits 0 either way.
//!
//! Takes roughly 20 minutes on one core: most of it is the 45-run noise sweep.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trex_core::demos::{
    aggregate_votes, generate_demos, rank_by_gt, rank_by_time, train_demonstrator, Stage, Vote, VoteRecord,
};
use trex_core::env::{gt_reward, GridworldSpec, Trajectory};
use trex_core::eval::{
    cap_held_out, extrapolation_report, held_out_rollouts, noise_sweep, run_pipeline, saliency_report,
    NoiseSweepConfig,
};
use trex_core::nn::RewardNet;
use trex_core::policy::{clone_best_demo, evaluate_policy, exact_return, value_iteration, LearnerConfig, PlanConfig};
use trex_core::presets;
use trex_core::reward::{
    gradient_check, pair_loss, pair_loss_grad, pair_prob, preference_prob, sample_pair, Preferred, SegmentPair,
    TrainConfig,
};
use trex_core::Result;

#[allow(dead_code)]
#[path = "../../core/tests/support/expectimax.rs"]
mod expectimax;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const EPISODES: usize = 100;

const BEAT_RATIO: f64 = 1.2;
const BEAT_MIN_SEEDS: usize = 4;
const CLONE_MAX_RATIO: f64 = 1.05;
const RUNTIME_BUDGET: Duration = Duration::from_secs(600);

const PEARSON_MIN: f64 = 0.8;
const PEARSON_MIN_SEEDS: usize = 4;
const HELD_OUT_SPAN: f64 = 2.0;
const HELD_OUT_PER_CHECKPOINT: usize = 4;

const NOISE_LEVELS: [f64; 5] = [1.0, 0.95, 0.85, 0.7, 0.5];
const NOISE_REPS: usize = 9;
const NOISE_KEEP: f64 = 0.8;

const TIME_ORDER_KEEP: f64 = 0.9;

const GRAD_NETS: usize = 20;
const GRAD_TOL: f64 = 1e-4;
const LN2_TOL: f64 = 1e-9;
const STABILITY_GAP: f64 = 1000.0;

struct Outcome {
    pass: bool,
    summary: String,
    details: Vec<String>,
}

fn report(name: &str, run: impl FnOnce() -> Result<Outcome>) -> bool {
    let t0 = Instant::now();
    let (pass, line, details) = match run() {
        Ok(o) => (o.pass, o.summary, o.details),
        Err(e) => (false, format!("error: {e}"), Vec::new()),
    };
    println!("{} {name}: {line} [{:.0}s]", if pass { "PASS" } else { "FAIL" }, t0.elapsed().as_secs_f64());
    for d in details {
        println!("    {d}");
    }
    let _ = std::io::stdout().flush();
    pass
}

fn demos_for(spec: &GridworldSpec, seed: u64) -> Result<(Vec<trex_core::policy::Checkpoint>, Vec<Trajectory>)> {
    let ckpts = train_demonstrator(spec, &LearnerConfig::default(), seed)?;
    let demos = generate_demos(spec, &ckpts, 1, seed)?;
    Ok((ckpts, demos))
}

fn best_return(demos: &[Trajectory]) -> f64 {
    demos.iter().map(|d| d.gt_return).fold(f64::NEG_INFINITY, f64::max)
}

fn train_cfg(seed: u64) -> TrainConfig {
    TrainConfig { seed, ..TrainConfig::default() }
}

struct Stage1Run {
    seed: u64,
    best: f64,
    trex: f64,
    clone: f64,
    pearson: f64,
    held_out: usize,
    held_span: f64,
    elapsed: Duration,
    saliency_top: Vec<usize>,
}

fn stage1_run(spec: &GridworldSpec, seed: u64) -> Result<Stage1Run> {
    let t0 = Instant::now();
    let (ckpts, all) = demos_for(spec, seed)?;
    let demos = Stage::Stage1.select(&all);
    let ds = rank_by_gt(&demos)?;
    let res = run_pipeline(spec, &ds, &train_cfg(seed), &PlanConfig::default(), EPISODES, seed)?;
    let elapsed = t0.elapsed();
    let best = best_return(&demos);
    let clone = evaluate_policy(spec, &clone_best_demo(spec, &demos)?, EPISODES, seed)?.mean;
    let held = cap_held_out(&held_out_rollouts(spec, &ckpts, HELD_OUT_PER_CHECKPOINT, seed)?, &demos, HELD_OUT_SPAN);
    let rep = extrapolation_report(&res.ensemble, spec, &demos, &held)?;
    let sal = saliency_report(&res.ensemble, &demos)?;
    Ok(Stage1Run {
        seed,
        best,
        trex: res.stats.mean,
        clone,
        pearson: rep.pearson,
        held_out: held.len(),
        held_span: best_return(&held) / best,
        elapsed,
        saliency_top: sal.ranking().into_iter().take(3).collect(),
    })
}

fn better_than_demo(runs: &[Stage1Run]) -> Result<Outcome> {
    let beat = runs.iter().filter(|r| r.trex > BEAT_RATIO * r.best).count();
    let clone_ok = runs.iter().filter(|r| r.clone <= CLONE_MAX_RATIO * r.best).count();
    let slowest = runs.iter().map(|r| r.elapsed).max().unwrap_or_default();
    let details = runs
        .iter()
        .map(|r| {
            format!(
                "seed {}: best demo {:.3}, T-REX {:.3} ({:.2}x), clone {:.3} ({:.2}x), pipeline {:.1}s",
                r.seed,
                r.best,
                r.trex,
                r.trex / r.best,
                r.clone,
                r.clone / r.best,
                r.elapsed.as_secs_f64()
            )
        })
        .collect();
    Ok(Outcome {
        pass: beat >= BEAT_MIN_SEEDS && clone_ok == runs.len() && slowest < RUNTIME_BUDGET,
        summary: format!(
            "T-REX > {BEAT_RATIO}x best demo in {beat}/{} seeds (need {BEAT_MIN_SEEDS}); clone <= {CLONE_MAX_RATIO}x in {clone_ok}/{} (need all); slowest pipeline {:.1}s (budget {}s)",
            runs.len(),
            runs.len(),
            slowest.as_secs_f64(),
            RUNTIME_BUDGET.as_secs()
        ),
        details,
    })
}

fn extrapolation(runs: &[Stage1Run]) -> Result<Outcome> {
    let ok = runs.iter().filter(|r| r.pearson >= PEARSON_MIN).count();
    let details = runs
        .iter()
        .map(|r| {
            format!(
                "seed {}: pearson {:.4} over {} held-out trajectories reaching {:.2}x best demo; saliency top-3 features {:?}",
                r.seed, r.pearson, r.held_out, r.held_span, r.saliency_top
            )
        })
        .collect();
    Ok(Outcome {
        pass: ok >= PEARSON_MIN_SEEDS,
        summary: format!("pearson >= {PEARSON_MIN} in {ok}/{} seeds (need {PEARSON_MIN_SEEDS})", runs.len()),
        details,
    })
}

fn time_order(spec: &GridworldSpec) -> Result<Outcome> {
    let mut details = Vec::new();
    let (mut gt_total, mut time_total) = (0.0, 0.0);
    for &seed in &SEEDS {
        let (_, demos) = demos_for(spec, seed)?;
        let by_gt = rank_by_gt(&demos)?;
        let by_time = rank_by_time(&demos)?;
        let gt = run_pipeline(spec, &by_gt, &train_cfg(seed), &PlanConfig::default(), EPISODES, seed)?.stats.mean;
        let time = run_pipeline(spec, &by_time, &train_cfg(seed), &PlanConfig::default(), EPISODES, seed)?.stats.mean;
        details.push(format!(
            "seed {seed}: gt-ranked {gt:.3}, time-ranked {time:.3} (time order correctness {:.3})",
            by_time.order_correctness
        ));
        gt_total += gt;
        time_total += time;
    }
    let n = SEEDS.len() as f64;
    let (gt_mean, time_mean) = (gt_total / n, time_total / n);
    Ok(Outcome {
        pass: time_mean >= TIME_ORDER_KEEP * gt_mean,
        summary: format!(
            "time-ranked mean {time_mean:.3} vs gt-ranked mean {gt_mean:.3} over {} seeds: {:.3} (need >= {TIME_ORDER_KEEP})",
            SEEDS.len(),
            time_mean / gt_mean
        ),
        details,
    })
}

fn noise_robustness(spec: &GridworldSpec) -> Result<Outcome> {
    let (_, mut demos) = demos_for(spec, 0)?;
    demos.sort_by(|a, b| a.gt_return.total_cmp(&b.gt_return));
    let cfg = NoiseSweepConfig {
        levels: NOISE_LEVELS.to_vec(),
        reps: NOISE_REPS,
        seed: 0,
        train: train_cfg(0),
        plan: PlanConfig::default(),
        episodes: EPISODES,
        max_swaps: 100_000,
    };
    let sweep = noise_sweep(spec, &demos, &cfg)?;
    let mean = |l: f64| sweep.level(l).map(|x| x.mean_return).unwrap_or(f64::NAN);
    let (clean, mid, worst) = (mean(1.0), mean(0.85), mean(0.5));
    let details = sweep
        .levels
        .iter()
        .map(|l| {
            format!(
                "level {}: correctness {:.3}, mean return {:.3} ± {:.3} ({} reps)",
                l.level, l.mean_correctness, l.mean_return, l.ci95, l.reps
            )
        })
        .collect();
    Ok(Outcome {
        pass: mid >= NOISE_KEEP * clean && worst < clean,
        summary: format!(
            "return at 0.85 is {:.3} of noise-free (need >= {NOISE_KEEP}); return at 0.5 {worst:.3} vs 1.0 {clean:.3} (need lower)",
            mid / clean
        ),
        details,
    })
}

fn numerical_core(spec: &GridworldSpec) -> Result<Outcome> {
    let cfg = TrainConfig::default();
    let sizes = cfg.layer_sizes(spec.num_features);
    let errors = gradient_check(&sizes, GRAD_NETS, 8, 6, 0)?;
    let worst_grad = errors.iter().copied().fold(0.0, f64::max);

    let (_, demos) = demos_for(spec, 0)?;
    let ds = rank_by_gt(&demos)?;
    let zero = RewardNet::zeros(&sizes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pairs: Vec<SegmentPair> = (0..256).map(|_| sample_pair(&ds, &cfg, &mut rng)).collect::<Result<_>>()?;
    let mut total = 0.0;
    for p in &pairs {
        total += pair_loss(&zero, p, 1.0)?;
    }
    let zero_loss_gap = (total / pairs.len() as f64 - std::f64::consts::LN_2).abs();

    let net = RewardNet::init(&sizes, 3)?;
    let same = SegmentPair { seg_i: pairs[0].seg_i.clone(), seg_j: pairs[0].seg_i.clone(), label: Preferred::Second, t_i: 0, t_j: 0 };
    let equal_half = pair_prob(&net, &same, 1.0)? == 0.5 && preference_prob(7.25, 7.25) == 0.5;

    // a one-weight linear net puts the two segment returns STABILITY_GAP apart
    let lin = RewardNet::from_params(&[1, 1], vec![STABILITY_GAP, 0.0], 0)?;
    let mut stable = true;
    for label in [Preferred::First, Preferred::Second] {
        for (a, b) in [(0.0, 1.0), (1.0, 0.0)] {
            let pair = SegmentPair { seg_i: vec![vec![a]], seg_j: vec![vec![b]], label, t_i: 0, t_j: 0 };
            let p = pair_prob(&lin, &pair, 1.0)?;
            let (l, g) = pair_loss_grad(&lin, &pair, 1.0)?;
            let want = if (b > a) == (label == Preferred::Second) { 0.0 } else { STABILITY_GAP };
            stable &= (0.0..=1.0).contains(&p) && l.is_finite() && g.0.iter().all(|x| x.is_finite());
            stable &= (l - want).abs() < 1e-9;
        }
    }

    Ok(Outcome {
        pass: worst_grad < GRAD_TOL && zero_loss_gap <= LN2_TOL && equal_half && stable,
        summary: format!(
            "grad check worst {worst_grad:.3e} over {GRAD_NETS} nets (< {GRAD_TOL:e}); zero-net loss |mean - ln2| = {zero_loss_gap:.1e} (<= {LN2_TOL:e}); equal returns give 0.5: {equal_half}; finite at |dJ| = {STABILITY_GAP}: {stable}"
        ),
        details: vec![format!("architecture {sizes:?}, 8 pairs of length 1..=6 per net")],
    })
}

fn oracle_equivalence() -> Result<Outcome> {
    let mut matched = 0;
    let mut details = Vec::new();
    for seed in 0..expectimax::BATTERY_SIZE {
        let spec = expectimax::battery_instance(seed);
        let plan = value_iteration(&spec, |c| gt_reward(&spec, c).unwrap(), &PlanConfig::default())?;
        let oracle = expectimax::expectimax(&spec, spec.start_cells[0], 0);
        let got = exact_return(&spec, &plan.policy);
        if got == oracle {
            matched += 1;
        } else {
            details.push(format!("instance {seed}: planner {got} vs exhaustive {oracle}"));
        }
    }
    Ok(Outcome {
        pass: matched == expectimax::BATTERY_SIZE,
        summary: format!("{matched}/{} 3x3 horizon-4 instances exactly equal", expectimax::BATTERY_SIZE),
        details,
    })
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_trex")
}

fn cli_pipeline(dir: &Path) -> Result<()> {
    let spec = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../specs/extrap-9");
    let spec = spec.display().to_string();
    let steps: Vec<Vec<&str>> = vec![
        vec!["gen-demos", "--spec", &spec, "--seed", "7", "--stage", "stage1"],
        vec!["corrupt", "--swaps", "3", "--seed", "1"],
        vec!["rank", "--by", "gt"],
        vec!["train-reward", "--seed", "7"],
        vec!["plan", "--reward", "learned"],
        vec!["plan", "--reward", "gt"],
        vec!["plan", "--reward", "zero"],
        vec!["evaluate", "--policy", "learned", "--seed", "7"],
        vec!["evaluate", "--policy", "gt", "--seed", "7"],
        vec!["evaluate", "--policy", "zero", "--seed", "7"],
        vec!["evaluate", "--policy", "clone", "--seed", "7"],
        vec!["extrapolate"],
        vec!["saliency"],
        vec!["summary"],
        vec!["sweep-noise", "--seed", "7", "--reps", "2", "--levels", "1,0.5", "--steps", "300", "--ensemble-size", "2"],
        vec!["grad-check", "--seed", "7", "--nets", "2"],
    ];
    for args in steps {
        let out = Command::new(bin()).arg("--run-dir").arg(dir).args(&args).output().map_err(|e| {
            trex_core::Error::Io { path: bin().into(), source: e }
        })?;
        if !out.status.success() {
            return Err(trex_core::Error::Invalid(format!(
                "trex {args:?}: {}",
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
    }
    Ok(())
}

fn files_below(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_below(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn determinism() -> Result<Outcome> {
    let a = tempfile::tempdir().map_err(|e| trex_core::Error::Io { path: "tmp".into(), source: e })?;
    let b = tempfile::tempdir().map_err(|e| trex_core::Error::Io { path: "tmp".into(), source: e })?;
    cli_pipeline(a.path())?;
    cli_pipeline(b.path())?;
    let fa: Vec<PathBuf> = files_below(a.path()).iter().map(|p| p.strip_prefix(a.path()).unwrap().into()).collect();
    let fb: Vec<PathBuf> = files_below(b.path()).iter().map(|p| p.strip_prefix(b.path()).unwrap().into()).collect();
    let mut details = Vec::new();
    if fa != fb {
        details.push(format!("file sets differ: {fa:?} vs {fb:?}"));
    }
    for rel in &fa {
        if fs::read(a.path().join(rel)).ok() != fs::read(b.path().join(rel)).ok() {
            details.push(format!("{} differs", rel.display()));
        }
    }
    Ok(Outcome {
        pass: details.is_empty() && !fa.is_empty(),
        summary: format!("{} artifacts compared across two full CLI runs, {} differ", fa.len(), details.len()),
        details,
    })
}

fn vote_aggregation() -> Result<Outcome> {
    use Vote::*;
    let rec = |i, j, v: &[Vote]| VoteRecord { pair: (i, j), votes: v.to_vec() };
    let fixture = vec![
        // clear majority for the second trajectory
        rec(0, 1, &[JBetter, JBetter, JBetter, IBetter, NotSure, NotSure]),
        // clear majority for the first trajectory
        rec(1, 2, &[IBetter, IBetter, IBetter, JBetter, JBetter, NotSure]),
        // tie between the two orders
        rec(2, 3, &[IBetter, IBetter, JBetter, JBetter, NotSure]),
        // not-sure majority
        rec(3, 4, &[NotSure, NotSure, NotSure, IBetter, JBetter, JBetter]),
        // tie between a preference and not-sure
        rec(4, 5, &[JBetter, JBetter, NotSure, NotSure]),
        // reversed orientation, then pooled with the forward record
        rec(6, 5, &[IBetter, IBetter]),
        rec(5, 6, &[IBetter]),
        rec(7, 8, &[]),
    ];
    let expected = vec![(0, 1), (2, 1), (5, 6)];
    let mut got = aggregate_votes(&fixture);
    got.sort();
    let fixture_ok = got == expected;

    let spec = presets::extrap9();
    let (_, demos) = demos_for(&spec, 0)?;
    let all: Vec<VoteRecord> = (0..demos.len())
        .flat_map(|i| (i + 1..demos.len()).map(move |j| (i, j)))
        .map(|(i, j)| rec(i, j, &[JBetter; 6]))
        .collect();
    let voted = aggregate_votes(&all).len();
    let ranked = rank_by_gt(&demos)?.pairs.len();
    let distinct = {
        let mut r: Vec<u64> = demos.iter().map(|d| d.gt_return.to_bits()).collect();
        r.sort();
        r.dedup();
        r.len() == demos.len()
    };
    Ok(Outcome {
        pass: fixture_ok && demos.len() == 12 && voted == 66 && (!distinct || ranked == 66),
        summary: format!(
            "fixture {}; {} demos give {voted} voted pairs and {ranked} ground-truth pairs (expected 66)",
            if fixture_ok { "reproduced" } else { "mismatch" },
            demos.len()
        ),
        details: if fixture_ok { Vec::new() } else { vec![format!("expected {expected:?}, got {got:?}")] },
    })
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let spec = presets::extrap9();
    let t0 = Instant::now();
    let mut passed = 0;
    let mut total = 0;
    let mut tally = |ok: bool| {
        total += 1;
        passed += ok as usize;
    };

    tally(report("numerical core", || numerical_core(&spec)));
    tally(report("oracle equivalence", oracle_equivalence));
    tally(report("vote aggregation", vote_aggregation));
    tally(report("determinism", determinism));
    let runs: Result<Vec<Stage1Run>> = SEEDS.iter().map(|&s| stage1_run(&spec, s)).collect();
    match runs {
        Ok(runs) => {
            tally(report("better than demonstrator", || better_than_demo(&runs)));
            tally(report("extrapolation correlation", || extrapolation(&runs)));
        }
        Err(e) => {
            let msg = e.to_string();
            tally(report("better than demonstrator", || Err(trex_core::Error::Invalid(msg.clone()))));
            tally(report("extrapolation correlation", || Err(trex_core::Error::Invalid(msg))));
        }
    }
    tally(report("time-ordered rankings", || time_order(&spec)));
    tally(report("noise robustness", || noise_robustness(&spec)));
    println!("acceptance: {passed}/{total} criteria pass in {:.0}s", t0.elapsed().as_secs_f64());
}
