//! Reward learning from ranked trajectories.
//!
//! Pairs of equal-length segments are cut from ranked trajectories, each
//! segment's predicted return is the (optionally discounted) sum of per-state
//! network outputs, and the network is trained with the pairwise softmax
//! cross-entropy so that the segment from the better trajectory scores higher.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::demos::RankedDataset;
use crate::error::{contract, invalid, Error, Result};
use crate::kv::KvDoc;
use crate::nn::{adam_step, finite_diff_grad, max_relative_error, AdamState, ForwardCache, Gradients, RewardNet};

pub const ENSEMBLE_SCHEMA: &str = "trex-ensemble/1";
const MAX_SAMPLE_RETRIES: usize = 1_000;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub num_pairs: usize,
    pub segment_len_min: usize,
    pub segment_len_max: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub train_steps: usize,
    pub ensemble_size: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,
    pub time_constrained: bool,
    pub gamma: f64,
    pub weight_decay: f64,
    /// Loss/accuracy are logged every this many steps (and at the last step).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            num_pairs: 5_000,
            segment_len_min: 10,
            segment_len_max: 30,
            lr: 1e-4,
            batch_size: 64,
            train_steps: 10_000,
            ensemble_size: 5,
            hidden: vec![64, 64],
            seed: 0,
            time_constrained: true,
            gamma: 1.0,
            weight_decay: 0.0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_pairs == 0 || self.batch_size == 0 || self.ensemble_size == 0 || self.log_every == 0 {
            return Err(contract!("num_pairs, batch_size, ensemble_size and log_every must be >= 1"));
        }
        if self.segment_len_min == 0 || self.segment_len_max < self.segment_len_min {
            return Err(contract!(
                "segment lengths must satisfy 1 <= min <= max, got [{}, {}]",
                self.segment_len_min,
                self.segment_len_max
            ));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(contract!("gamma must lie in (0,1], got {}", self.gamma));
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return Err(contract!("lr must be positive and weight_decay non-negative"));
        }
        if self.hidden.contains(&0) {
            return Err(contract!("hidden layer sizes must be positive"));
        }
        Ok(())
    }

    pub fn layer_sizes(&self, input_dim: usize) -> Vec<usize> {
        let mut sizes = vec![input_dim];
        sizes.extend(&self.hidden);
        sizes.push(1);
        sizes
    }

    /// Writes every field as `prefix.key = value`.
    pub fn write_kv(&self, doc: &mut KvDoc, prefix: &str) {
        let key = |k: &str| format!("{prefix}{k}");
        doc.set(&key("num_pairs"), self.num_pairs);
        doc.set(&key("segment_len_min"), self.segment_len_min);
        doc.set(&key("segment_len_max"), self.segment_len_max);
        doc.set(&key("lr"), self.lr);
        doc.set(&key("batch_size"), self.batch_size);
        doc.set(&key("train_steps"), self.train_steps);
        doc.set(&key("ensemble_size"), self.ensemble_size);
        let hidden: Vec<String> = self.hidden.iter().map(usize::to_string).collect();
        doc.set(&key("hidden"), hidden.join(" "));
        doc.set(&key("seed"), self.seed);
        doc.set(&key("time_constrained"), self.time_constrained);
        doc.set(&key("gamma"), self.gamma);
        doc.set(&key("weight_decay"), self.weight_decay);
        doc.set(&key("log_every"), self.log_every);
    }

    /// Overrides fields present in `doc` under `prefix`.
    pub fn apply_kv(&mut self, doc: &KvDoc, prefix: &str) -> Result<()> {
        let key = |k: &str| format!("{prefix}{k}");
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = doc.parse_value(&key(stringify!($field)))? {
                    self.$field = v;
                }
            };
        }
        take!(num_pairs);
        take!(segment_len_min);
        take!(segment_len_max);
        take!(lr);
        take!(batch_size);
        take!(train_steps);
        take!(ensemble_size);
        take!(seed);
        take!(time_constrained);
        take!(gamma);
        take!(weight_decay);
        take!(log_every);
        if let Some(h) = doc.parse_list(&key("hidden"))? {
            self.hidden = h;
        }
        Ok(())
    }
}

/// Which segment of a pair comes from the preferred trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preferred {
    First,
    Second,
}

/// Two equal-length segments; `seg_i` starts at `t_i` in its source, `seg_j` at `t_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentPair {
    pub seg_i: Vec<Vec<f64>>,
    pub seg_j: Vec<Vec<f64>>,
    pub label: Preferred,
    pub t_i: usize,
    pub t_j: usize,
}

impl SegmentPair {
    /// The same comparison with the segments presented in the other order.
    pub fn swapped(&self) -> SegmentPair {
        SegmentPair {
            seg_i: self.seg_j.clone(),
            seg_j: self.seg_i.clone(),
            label: match self.label {
                Preferred::First => Preferred::Second,
                Preferred::Second => Preferred::First,
            },
            t_i: self.t_j,
            t_j: self.t_i,
        }
    }
}

/// Segment indices into dataset trajectories; the cheap form of [`SegmentPair`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct PairDraw {
    worse: usize,
    better: usize,
    t_worse: usize,
    t_better: usize,
    len: usize,
}

fn draw_pair<R: Rng + ?Sized>(dataset: &RankedDataset, cfg: &TrainConfig, rng: &mut R) -> Result<PairDraw> {
    if dataset.pairs.is_empty() {
        return Err(contract!("dataset has no preference pairs"));
    }
    for _ in 0..MAX_SAMPLE_RETRIES {
        let (worse, better) = dataset.pairs[rng.gen_range(0..dataset.pairs.len())];
        let len_w = dataset.trajectories[worse].len();
        let len_b = dataset.trajectories[better].len();
        let max_len = cfg.segment_len_max.min(len_w).min(len_b);
        if max_len < cfg.segment_len_min {
            continue;
        }
        let len = rng.gen_range(cfg.segment_len_min..=max_len);
        let t_worse = rng.gen_range(0..=len_w - len);
        let t_better = if cfg.time_constrained {
            if t_worse > len_b - len {
                continue;
            }
            rng.gen_range(t_worse..=len_b - len)
        } else {
            rng.gen_range(0..=len_b - len)
        };
        return Ok(PairDraw { worse, better, t_worse, t_better, len });
    }
    Err(invalid!(
        "no feasible segment pair after {MAX_SAMPLE_RETRIES} attempts; trajectories are shorter than segment_len_min={}",
        cfg.segment_len_min
    ))
}

fn materialize(dataset: &RankedDataset, d: &PairDraw) -> SegmentPair {
    let cut = |i: usize, t: usize| dataset.trajectories[i].observations[t..t + d.len].to_vec();
    SegmentPair {
        seg_i: cut(d.worse, d.t_worse),
        seg_j: cut(d.better, d.t_better),
        label: Preferred::Second,
        t_i: d.t_worse,
        t_j: d.t_better,
    }
}

/// Samples one training pair: the less-preferred segment is `seg_i`.
pub fn sample_pair<R: Rng + ?Sized>(dataset: &RankedDataset, cfg: &TrainConfig, rng: &mut R) -> Result<SegmentPair> {
    let d = draw_pair(dataset, cfg, rng)?;
    Ok(materialize(dataset, &d))
}

/// `sum_k gamma^k r(s_k)`.
pub fn predicted_return(net: &RewardNet, segment: &[Vec<f64>], gamma: f64) -> Result<f64> {
    if segment.is_empty() {
        return Err(contract!("empty segment"));
    }
    let mut total = 0.0;
    let mut discount = 1.0;
    for obs in segment {
        total += discount * net.forward(obs)?;
        discount *= gamma;
    }
    Ok(total)
}

/// Logistic function, evaluated without overflow.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Probability that `seg_j` has the higher return, from the two predicted returns.
pub fn preference_prob(return_i: f64, return_j: f64) -> f64 {
    sigmoid(return_j - return_i)
}

/// `P(J(seg_i) < J(seg_j))` under the softmax preference model.
pub fn pair_prob(net: &RewardNet, pair: &SegmentPair, gamma: f64) -> Result<f64> {
    check_pair(pair)?;
    Ok(preference_prob(
        predicted_return(net, &pair.seg_i, gamma)?,
        predicted_return(net, &pair.seg_j, gamma)?,
    ))
}

fn check_pair(pair: &SegmentPair) -> Result<()> {
    if pair.seg_i.is_empty() || pair.seg_i.len() != pair.seg_j.len() {
        return Err(contract!(
            "segments must be nonempty and of equal length, got {} and {}",
            pair.seg_i.len(),
            pair.seg_j.len()
        ));
    }
    Ok(())
}

/// Cross-entropy of the labelled preference, from the two predicted returns.
///
/// Returns the loss and its derivative with respect to each return.
fn loss_from_returns(return_i: f64, return_j: f64, label: Preferred) -> (f64, f64, f64) {
    let (pref, other) = match label {
        Preferred::Second => (return_j, return_i),
        Preferred::First => (return_i, return_j),
    };
    let margin = other - pref;
    let loss = softplus(margin);
    // dL/d(other) = sigmoid(other - pref)
    let s = sigmoid(margin);
    match label {
        Preferred::Second => (loss, s, -s),
        Preferred::First => (loss, -s, s),
    }
}

/// `-ln P(preferred segment preferred)`.
pub fn pair_loss(net: &RewardNet, pair: &SegmentPair, gamma: f64) -> Result<f64> {
    check_pair(pair)?;
    let ri = predicted_return(net, &pair.seg_i, gamma)?;
    let rj = predicted_return(net, &pair.seg_j, gamma)?;
    Ok(loss_from_returns(ri, rj, pair.label).0)
}

/// Loss of one pair and its parameter gradient via backprop.
pub fn pair_loss_grad(net: &RewardNet, pair: &SegmentPair, gamma: f64) -> Result<(f64, Gradients)> {
    check_pair(pair)?;
    let caches = |seg: &[Vec<f64>]| -> Result<Vec<ForwardCache>> { seg.iter().map(|o| net.forward_cached(o)).collect() };
    let ci = caches(&pair.seg_i)?;
    let cj = caches(&pair.seg_j)?;
    let ret = |c: &[ForwardCache]| {
        let mut d = 1.0;
        c.iter().fold(0.0, |acc, x| {
            let v = acc + d * x.output;
            d *= gamma;
            v
        })
    };
    let (loss, gi, gj) = loss_from_returns(ret(&ci), ret(&cj), pair.label);
    let mut grads = Gradients::zeros_like(net);
    for (cache, upstream) in [(&ci, gi), (&cj, gj)] {
        let mut d = 1.0;
        for c in cache.iter() {
            net.backward_into(upstream * d, c, &mut grads)?;
            d *= gamma;
        }
    }
    Ok((loss, grads))
}

/// Mean loss over a minibatch and its gradient.
pub fn batch_loss_grad(net: &RewardNet, pairs: &[SegmentPair], gamma: f64) -> Result<(f64, Gradients)> {
    if pairs.is_empty() {
        return Err(contract!("empty minibatch"));
    }
    let mut total = 0.0;
    let mut grads = Gradients::zeros_like(net);
    for p in pairs {
        let (l, g) = pair_loss_grad(net, p, gamma)?;
        total += l;
        grads.0.iter_mut().zip(&g.0).for_each(|(a, b)| *a += b);
    }
    let k = 1.0 / pairs.len() as f64;
    grads.scale(k);
    Ok((total * k, grads))
}

/// Pairs rewritten as indices into a table of distinct observations, so a
/// minibatch needs one forward/backward pass per distinct state rather than
/// per segment element.
struct InternedPool {
    table: Vec<Vec<f64>>,
    pairs: Vec<(Vec<u32>, Vec<u32>)>,
}

impl InternedPool {
    fn build(dataset: &RankedDataset, draws: &[PairDraw]) -> Self {
        let mut index: HashMap<Vec<u64>, u32> = HashMap::new();
        let mut table = Vec::new();
        let mut intern = |obs: &Vec<f64>| -> u32 {
            let key: Vec<u64> = obs.iter().map(|v| v.to_bits()).collect();
            *index.entry(key).or_insert_with(|| {
                table.push(obs.clone());
                (table.len() - 1) as u32
            })
        };
        let pairs = draws
            .iter()
            .map(|d| {
                let mut seg = |i: usize, t: usize| -> Vec<u32> {
                    dataset.trajectories[i].observations[t..t + d.len].iter().map(&mut intern).collect()
                };
                (seg(d.worse, d.t_worse), seg(d.better, d.t_better))
            })
            .collect();
        InternedPool { table, pairs }
    }

    /// Mean loss, accuracy and gradient over the pairs at `batch` (better segment second).
    fn loss_grad(&self, net: &RewardNet, batch: &[usize], gamma: f64, want_grad: bool) -> Result<(f64, f64, Gradients)> {
        let mut used = vec![false; self.table.len()];
        for &b in batch {
            let (w, p) = &self.pairs[b];
            w.iter().chain(p).for_each(|&i| used[i as usize] = true);
        }
        let mut caches: Vec<Option<ForwardCache>> = vec![None; self.table.len()];
        let mut outputs = vec![0.0; self.table.len()];
        for (i, flag) in used.iter().enumerate() {
            if *flag {
                let c = net.forward_cached(&self.table[i])?;
                outputs[i] = c.output;
                caches[i] = Some(c);
            }
        }
        let mut upstream = vec![0.0; self.table.len()];
        let k = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut correct = 0usize;
        for &b in batch {
            let (w, p) = &self.pairs[b];
            let ret = |seg: &[u32]| {
                let mut d = 1.0;
                seg.iter().fold(0.0, |acc, &i| {
                    let v = acc + d * outputs[i as usize];
                    d *= gamma;
                    v
                })
            };
            let (ri, rj) = (ret(w), ret(p));
            if rj > ri {
                correct += 1;
            }
            let (l, gi, gj) = loss_from_returns(ri, rj, Preferred::Second);
            loss += l;
            for (seg, g) in [(w, gi), (p, gj)] {
                let mut d = 1.0;
                for &i in seg {
                    upstream[i as usize] += k * g * d;
                    d *= gamma;
                }
            }
        }
        let mut grads = Gradients::zeros_like(net);
        if want_grad {
            for (i, c) in caches.iter().enumerate() {
                if let Some(c) = c {
                    net.backward_into(upstream[i], c, &mut grads)?;
                }
            }
        }
        Ok((loss * k, correct as f64 * k, grads))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub net: usize,
    pub step: usize,
    pub mean_loss: f64,
    pub pair_accuracy: f64,
}

pub fn render_train_log(rows: &[LogRow]) -> String {
    let mut out = String::from("net,step,mean_loss,pair_accuracy\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.net, r.step, r.mean_loss, r.pair_accuracy);
    }
    out
}

/// K independently trained nets with per-net output scales.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub nets: Vec<RewardNet>,
    pub norm_scale: Vec<f64>,
    pub probe_hash: String,
    pub cfg: TrainConfig,
}

/// Every demonstration observation, in dataset order.
pub fn probe_set(dataset: &RankedDataset) -> Vec<&[f64]> {
    dataset
        .trajectories
        .iter()
        .flat_map(|t| t.observations.iter().map(Vec::as_slice))
        .collect()
}

pub fn probe_fingerprint(probe: &[&[f64]]) -> String {
    let mut h = Sha256::new();
    for obs in probe {
        for v in *obs {
            h.update(v.to_le_bytes());
        }
        h.update(b";");
    }
    hex::encode(h.finalize())
}

/// Population standard deviation of the net's outputs over `probe`.
pub fn output_std(net: &RewardNet, probe: &[&[f64]]) -> Result<f64> {
    if probe.is_empty() {
        return Err(contract!("empty probe set"));
    }
    let outs: Vec<f64> = probe.iter().map(|o| net.forward(o)).collect::<Result<_>>()?;
    let mean = outs.iter().sum::<f64>() / outs.len() as f64;
    Ok((outs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / outs.len() as f64).sqrt())
}

fn member_seed(seed: u64, k: usize) -> u64 {
    let mut z = seed ^ (k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct Member {
    net: RewardNet,
    log: Vec<LogRow>,
    pool_accuracy: f64,
}

fn train_member(dataset: &RankedDataset, cfg: &TrainConfig, k: usize) -> Result<Member> {
    let seed = member_seed(cfg.seed, k);
    let input_dim = dataset.trajectories[0].observations[0].len();
    let mut net = RewardNet::init(&cfg.layer_sizes(input_dim), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let draws: Vec<PairDraw> = (0..cfg.num_pairs).map(|_| draw_pair(dataset, cfg, &mut rng)).collect::<Result<_>>()?;
    let pool = InternedPool::build(dataset, &draws);
    let mut adam = AdamState::new(&net, cfg.lr);
    adam.weight_decay = cfg.weight_decay;
    let mut log = Vec::new();
    let mut batch = vec![0usize; cfg.batch_size];
    for step in 0..cfg.train_steps {
        batch.iter_mut().for_each(|b| *b = rng.gen_range(0..pool.pairs.len()));
        let (loss, acc, grads) = pool.loss_grad(&net, &batch, cfg.gamma, true)?;
        if step % cfg.log_every == 0 || step + 1 == cfg.train_steps {
            log.push(LogRow { net: k, step, mean_loss: loss, pair_accuracy: acc });
        }
        adam_step(&mut net, &grads, &mut adam)?;
    }
    let all: Vec<usize> = (0..pool.pairs.len()).collect();
    let (_, pool_accuracy, _) = pool.loss_grad(&net, &all, cfg.gamma, false)?;
    Ok(Member { net, log, pool_accuracy })
}

/// Result of [`train_reward_logged`].
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub ensemble: Ensemble,
    pub log: Vec<LogRow>,
    /// Per net: fraction of its sampled training pairs ranked correctly after training.
    pub pool_accuracy: Vec<f64>,
}

pub fn train_reward(dataset: &RankedDataset, cfg: &TrainConfig) -> Result<Ensemble> {
    Ok(train_reward_logged(dataset, cfg)?.ensemble)
}

/// Trains `cfg.ensemble_size` nets in parallel, each on its own seeded pair pool.
pub fn train_reward_logged(dataset: &RankedDataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if dataset.pairs.is_empty() {
        return Err(contract!("cannot train a reward on an empty preference set"));
    }
    let members: Vec<Member> = (0..cfg.ensemble_size)
        .into_par_iter()
        .map(|k| train_member(dataset, cfg, k))
        .collect::<Result<_>>()?;
    let probe = probe_set(dataset);
    let mut nets = Vec::with_capacity(members.len());
    let mut norm_scale = Vec::with_capacity(members.len());
    let mut log = Vec::new();
    let mut pool_accuracy = Vec::new();
    for m in members {
        let std = output_std(&m.net, &probe)?;
        if !(std >= 1e-8) {
            return Err(Error::DegenerateNet(std));
        }
        norm_scale.push(std);
        nets.push(m.net);
        log.extend(m.log);
        pool_accuracy.push(m.pool_accuracy);
    }
    Ok(TrainReport {
        ensemble: Ensemble { nets, norm_scale, probe_hash: probe_fingerprint(&probe), cfg: cfg.clone() },
        log,
        pool_accuracy,
    })
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.nets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nets.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.nets[0].input_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.nets.is_empty() || self.nets.len() != self.norm_scale.len() {
            return Err(invalid!("ensemble needs K >= 1 nets with one scale each"));
        }
        if self.norm_scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(invalid!("normalization scales must be positive"));
        }
        if self.nets.iter().any(|n| n.input_dim() != self.nets[0].input_dim()) {
            return Err(invalid!("ensemble members disagree on input dimension"));
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut meta = KvDoc::new(ENSEMBLE_SCHEMA);
        meta.set("k", self.nets.len());
        meta.set("probe_hash", &self.probe_hash);
        let scales: Vec<String> = self.norm_scale.iter().map(f64::to_string).collect();
        meta.set("norm_scale", scales.join(" "));
        self.cfg.write_kv(&mut meta, "cfg.");
        let meta_path = dir.join("meta");
        std::fs::write(&meta_path, meta.render()).map_err(|e| Error::io(&meta_path, e))?;
        for (k, net) in self.nets.iter().enumerate() {
            net.save(&dir.join(format!("net_{k}.model")))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta");
        if !meta_path.exists() {
            return Err(Error::MissingArtifact(meta_path));
        }
        let meta = KvDoc::load(&meta_path)?;
        if meta.schema != ENSEMBLE_SCHEMA {
            return Err(Error::Schema { what: "ensemble".into(), expected: ENSEMBLE_SCHEMA.into(), found: meta.schema });
        }
        let k: usize = meta.parse_required("k")?;
        let norm_scale: Vec<f64> = meta.parse_list("norm_scale")?.ok_or_else(|| invalid!("missing norm_scale"))?;
        if norm_scale.len() != k {
            return Err(invalid!("meta lists {} scales for {k} nets", norm_scale.len()));
        }
        let mut cfg = TrainConfig::default();
        cfg.apply_kv(&meta, "cfg.")?;
        let nets = (0..k)
            .map(|i| {
                let p = dir.join(format!("net_{i}.model"));
                if !p.exists() {
                    return Err(Error::MissingArtifact(p));
                }
                RewardNet::load(&p)
            })
            .collect::<Result<_>>()?;
        let ens = Ensemble { nets, norm_scale, probe_hash: meta.require("probe_hash")?.to_string(), cfg };
        ens.validate()?;
        Ok(ens)
    }
}

/// Mean of the scale-normalized member outputs.
pub fn ensemble_reward(ens: &Ensemble, obs: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (net, scale) in ens.nets.iter().zip(&ens.norm_scale) {
        total += net.forward(obs)? / scale;
    }
    Ok(total / ens.nets.len() as f64)
}

/// Ensemble reward squashed into (0, 1).
pub fn squashed_reward(ens: &Ensemble, obs: &[f64]) -> Result<f64> {
    Ok(sigmoid(ensemble_reward(ens, obs)?))
}

/// Predicted return of a whole observation sequence under the ensemble reward.
pub fn ensemble_return(ens: &Ensemble, observations: &[Vec<f64>], gamma: f64) -> Result<f64> {
    let mut total = 0.0;
    let mut d = 1.0;
    for o in observations {
        total += d * ensemble_reward(ens, o)?;
        d *= gamma;
    }
    Ok(total)
}

/// Fraction of dataset preferences whose full trajectories the ensemble orders correctly.
pub fn dataset_accuracy(ens: &Ensemble, dataset: &RankedDataset) -> Result<f64> {
    if dataset.pairs.is_empty() {
        return Ok(1.0);
    }
    let returns: Vec<f64> = dataset
        .trajectories
        .iter()
        .map(|t| ensemble_return(ens, &t.observations, 1.0))
        .collect::<Result<_>>()?;
    let ok = dataset.pairs.iter().filter(|&&(i, j)| returns[i] < returns[j]).count();
    Ok(ok as f64 / dataset.pairs.len() as f64)
}

/// Worst analytic-vs-central-difference relative error of the batch loss
/// gradient, one entry per random net. Parameters whose difference stencil
/// crosses a LeakyReLU kink are left out. Each net sees its own random batch of
/// `batch` equal-length segment pairs, lengths in `1..=max_len`, over
/// observations in `[0,1)^F`.
pub fn gradient_check(
    layer_sizes: &[usize],
    nets: usize,
    batch: usize,
    max_len: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if batch == 0 || max_len == 0 {
        return Err(contract!("gradient check needs a nonempty batch and segments"));
    }
    let f = layer_sizes.first().copied().unwrap_or(0);
    (0..nets)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let net = RewardNet::init(layer_sizes, rng.gen())?;
            let seg = |rng: &mut ChaCha8Rng, len: usize| -> Vec<Vec<f64>> {
                (0..len).map(|_| (0..f).map(|_| rng.gen()).collect()).collect()
            };
            let pairs: Vec<SegmentPair> = (0..batch)
                .map(|_| {
                    let len = rng.gen_range(1..=max_len);
                    SegmentPair {
                        seg_i: seg(&mut rng, len),
                        seg_j: seg(&mut rng, len),
                        label: if rng.gen() { Preferred::First } else { Preferred::Second },
                        t_i: 0,
                        t_j: 0,
                    }
                })
                .collect();
            let gamma = 1.0;
            let step = 1e-5;
            let (_, analytic) = batch_loss_grad(&net, &pairs, gamma)?;
            let loss = |n: &RewardNet| {
                let total: Result<f64> = pairs.iter().map(|p| pair_loss(n, p, gamma)).sum();
                total.map(|t| t / pairs.len() as f64).unwrap_or(f64::NAN)
            };
            let numeric = finite_diff_grad(loss, &net, step);
            let obs: Vec<&[f64]> = pairs.iter().flat_map(|p| p.seg_i.iter().chain(&p.seg_j)).map(Vec::as_slice).collect();
            let mut worst: f64 = 0.0;
            for i in 0..net.num_params() {
                let err = max_relative_error(&Gradients(vec![analytic.0[i]]), &Gradients(vec![numeric.0[i]]));
                if err > worst && !crosses_kink(&net, &obs, i, step)? {
                    worst = err;
                }
            }
            Ok(worst)
        })
        .collect()
}

/// Whether moving parameter `i` by `±step` flips any hidden unit's sign on `obs`,
/// in which case a central difference straddles a kink.
fn crosses_kink(net: &RewardNet, obs: &[&[f64]], i: usize, step: f64) -> Result<bool> {
    let mut probe = net.clone();
    for o in obs {
        let base = net.activation_pattern(o)?;
        for d in [step, -step] {
            probe.params_mut()[i] = net.params()[i] + d;
            if probe.activation_pattern(o)? != base {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demos::{rank_by_gt, Provenance};
    use crate::env::Trajectory;

    fn traj(id: &str, obs: Vec<Vec<f64>>, ret: f64) -> Trajectory {
        Trajectory { id: id.into(), created_step: 0, observations: obs, actions: None, gt_return: ret }
    }

    fn random_obs(rng: &mut ChaCha8Rng, n: usize, f: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..f).map(|_| rng.gen()).collect()).collect()
    }

    fn toy_dataset(n: usize, len: usize) -> RankedDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let demos: Vec<_> = (0..n).map(|k| traj(&format!("t{k}"), random_obs(&mut rng, len, 3), k as f64)).collect();
        rank_by_gt(&demos).unwrap()
    }

    #[test]
    fn length_two_trajectories_with_unit_segments() {
        let ds = toy_dataset(2, 2);
        let cfg = TrainConfig { segment_len_min: 1, segment_len_max: 1, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let p = sample_pair(&ds, &cfg, &mut rng).unwrap();
            assert_eq!(p.seg_i.len(), 1);
            assert!(p.t_i <= p.t_j);
        }
    }

    #[test]
    fn time_constraint_always_holds() {
        let ds = toy_dataset(6, 40);
        let cfg = TrainConfig { segment_len_min: 3, segment_len_max: 12, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10_000 {
            let p = sample_pair(&ds, &cfg, &mut rng).unwrap();
            assert!(p.t_i <= p.t_j);
            assert_eq!(p.seg_i.len(), p.seg_j.len());
            assert!((3..=12).contains(&p.seg_i.len()));
        }
    }

    #[test]
    fn unconstrained_starts_are_uniform() {
        // fixed L so that starts are uniform over 0..=len-L
        let ds = toy_dataset(3, 20);
        let cfg = TrainConfig { segment_len_min: 5, segment_len_max: 5, time_constrained: false, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let draws = 10_000;
        let bins = 16;
        let mut counts = vec![0usize; bins];
        for _ in 0..draws {
            let p = sample_pair(&ds, &cfg, &mut rng).unwrap();
            counts[p.t_j] += 1;
        }
        let expected = draws as f64 / bins as f64;
        let sigma = (expected * (1.0 - 1.0 / bins as f64)).sqrt();
        for c in &counts {
            assert!((*c as f64 - expected).abs() < 3.0 * sigma + 1.0, "{counts:?}");
        }
        let chi2: f64 = counts.iter().map(|c| (*c as f64 - expected).powi(2) / expected).sum();
        // 15 dof, p = 0.001 critical value
        assert!(chi2 < 37.7, "chi2 = {chi2}");
    }

    #[test]
    fn infeasible_lengths_error_out() {
        let ds = toy_dataset(3, 4);
        let cfg = TrainConfig { segment_len_min: 10, segment_len_max: 20, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_pair(&ds, &cfg, &mut rng).is_err());
        let empty = RankedDataset { pairs: vec![], ..toy_dataset(2, 4) };
        assert!(sample_pair(&empty, &cfg, &mut rng).is_err());
    }

    #[test]
    fn predicted_return_cases() {
        let zero = RewardNet::zeros(&[3, 4, 1]).unwrap();
        let seg = vec![vec![0.2, 0.4, 0.6]; 5];
        assert_eq!(predicted_return(&zero, &seg, 1.0).unwrap(), 0.0);
        let constant = RewardNet::from_params(&[3, 1], vec![0.0, 0.0, 0.0, 1.5], 0).unwrap();
        assert_eq!(predicted_return(&constant, &seg, 1.0).unwrap(), 7.5);
        assert!(predicted_return(&constant, &[], 1.0).is_err());

        let net = RewardNet::init(&[3, 8, 1], 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let seg = random_obs(&mut rng, 9, 3);
        let mut expected = 0.0;
        for (k, o) in seg.iter().enumerate() {
            expected += 0.9f64.powi(k as i32) * net.forward(o).unwrap();
        }
        assert!((predicted_return(&net, &seg, 0.9).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn probabilities_are_stable() {
        assert_eq!(preference_prob(2.0, 2.0), 0.5);
        assert!((preference_prob(0.0, 3f64.ln()) - 0.75).abs() < 1e-15);
        let p = preference_prob(0.0, 1000.0);
        assert!(p.is_finite() && p >= 1.0 - 1e-12);
        let q = preference_prob(1000.0, 0.0);
        assert!(q.is_finite() && q >= 0.0 && q < 1e-12);
        let (l, _, _) = loss_from_returns(1000.0, 0.0, Preferred::Second);
        assert!((l - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn gradient_check_passes_on_random_nets() {
        let errs = gradient_check(&[6, 16, 16, 1], 3, 8, 6, 11).unwrap();
        assert_eq!(errs.len(), 3);
        assert!(errs.iter().all(|e| *e < 1e-4), "{errs:?}");
        assert!(gradient_check(&[6, 16, 1], 1, 0, 6, 0).is_err());
    }

    #[test]
    fn zero_net_loss_is_ln2() {
        let net = RewardNet::zeros(&[3, 4, 1]).unwrap();
        let ds = toy_dataset(4, 10);
        let cfg = TrainConfig { segment_len_min: 2, segment_len_max: 6, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let p = sample_pair(&ds, &cfg, &mut rng).unwrap();
            assert!((pair_loss(&net, &p, 1.0).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn relabeling_symmetry_is_exact() {
        let net = RewardNet::init(&[3, 6, 1], 7).unwrap();
        let ds = toy_dataset(4, 10);
        let cfg = TrainConfig { segment_len_min: 2, segment_len_max: 6, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let p = sample_pair(&ds, &cfg, &mut rng).unwrap();
            assert_eq!(pair_loss(&net, &p, 1.0).unwrap(), pair_loss(&net, &p.swapped(), 1.0).unwrap());
        }
    }

    #[test]
    fn pair_loss_gradient_matches_finite_differences() {
        let ds = toy_dataset(5, 12);
        let cfg = TrainConfig { segment_len_min: 2, segment_len_max: 5, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for seed in 0..4 {
            let net = RewardNet::init(&[3, 6, 4, 1], seed).unwrap();
            let batch: Vec<_> = (0..4).map(|_| sample_pair(&ds, &cfg, &mut rng).unwrap()).collect();
            let (_, analytic) = batch_loss_grad(&net, &batch, 0.95).unwrap();
            let numeric = finite_diff_grad(|n| batch_loss_grad(n, &batch, 0.95).unwrap().0, &net, 1e-5);
            assert!(max_relative_error(&analytic, &numeric) < 1e-4);
        }
    }

    #[test]
    fn interned_pool_matches_direct_batch_gradient() {
        let ds = toy_dataset(5, 12);
        let cfg = TrainConfig { segment_len_min: 2, segment_len_max: 5, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let draws: Vec<_> = (0..16).map(|_| draw_pair(&ds, &cfg, &mut rng).unwrap()).collect();
        let pool = InternedPool::build(&ds, &draws);
        let pairs: Vec<_> = draws.iter().map(|d| materialize(&ds, d)).collect();
        let net = RewardNet::init(&[3, 5, 1], 1).unwrap();
        let idx: Vec<usize> = (0..16).collect();
        let (l1, _, g1) = pool.loss_grad(&net, &idx, 0.9, true).unwrap();
        let (l2, g2) = batch_loss_grad(&net, &pairs, 0.9).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        assert!(max_relative_error(&g1, &g2) < 1e-9, "{}", max_relative_error(&g1, &g2));
    }

    #[test]
    fn loss_falls_over_first_hundred_steps() {
        let ds = toy_dataset(6, 20);
        let cfg = TrainConfig { segment_len_min: 3, segment_len_max: 8, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch: Vec<_> = (0..64).map(|_| sample_pair(&ds, &cfg, &mut rng).unwrap()).collect();
        let mut net = RewardNet::init(&[3, 16, 16, 1], 0).unwrap();
        let mut adam = AdamState::new(&net, 1e-4);
        let mut prev = f64::INFINITY;
        for _ in 0..100 {
            let (loss, g) = batch_loss_grad(&net, &batch, 1.0).unwrap();
            assert!(loss < prev, "{loss} >= {prev}");
            prev = loss;
            adam_step(&mut net, &g, &mut adam).unwrap();
        }
    }

    #[test]
    fn untrained_ensemble_and_errors() {
        let ds = toy_dataset(4, 12);
        let cfg = TrainConfig {
            ensemble_size: 1,
            train_steps: 0,
            num_pairs: 10,
            segment_len_min: 2,
            segment_len_max: 4,
            hidden: vec![8],
            ..Default::default()
        };
        let ens = train_reward(&ds, &cfg).unwrap();
        assert_eq!(ens.len(), 1);
        assert!(ens.norm_scale[0].is_finite() && ens.norm_scale[0] > 0.0);
        let empty = RankedDataset { pairs: vec![], provenance: Provenance::Human, ..ds.clone() };
        assert!(train_reward(&empty, &cfg).is_err());
        let flat: Vec<_> = (0..3).map(|k| traj(&format!("f{k}"), vec![vec![0.5; 3]; 12], k as f64)).collect();
        let flat = rank_by_gt(&flat).unwrap();
        assert!(matches!(train_reward(&flat, &cfg), Err(Error::DegenerateNet(_))));
    }

    #[test]
    fn ensemble_aggregation_rules() {
        let net = RewardNet::init(&[3, 5, 1], 4).unwrap();
        let x = [0.1, 0.5, 0.9];
        let single = Ensemble { nets: vec![net.clone()], norm_scale: vec![1.0], probe_hash: String::new(), cfg: TrainConfig::default() };
        assert_eq!(ensemble_reward(&single, &x).unwrap(), net.forward(&x).unwrap());
        let tripled = Ensemble { nets: vec![net.clone(); 3], norm_scale: vec![1.0; 3], ..single.clone() };
        assert!((ensemble_reward(&tripled, &x).unwrap() - net.forward(&x).unwrap()).abs() < 1e-15);
        assert_eq!(squashed_reward(&Ensemble { nets: vec![RewardNet::zeros(&[3, 1]).unwrap()], ..single }, &x).unwrap(), 0.5);
    }

    #[test]
    fn squashing_is_stable_and_monotone() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(1000.0) - 1.0).abs() < 1e-12);
        assert!(sigmoid(-1000.0) < 1e-12 && sigmoid(-1000.0) >= 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let a: f64 = rng.gen_range(-30.0..30.0);
            let b: f64 = rng.gen_range(-30.0..30.0);
            if a < b {
                assert!(sigmoid(a) <= sigmoid(b));
            }
        }
    }

    #[test]
    fn config_kv_round_trip() {
        let cfg = TrainConfig { seed: 42, hidden: vec![16, 8], time_constrained: false, lr: 3e-4, ..Default::default() };
        let mut doc = KvDoc::new("x/1");
        cfg.write_kv(&mut doc, "cfg.");
        let mut back = TrainConfig::default();
        back.apply_kv(&doc, "cfg.").unwrap();
        assert_eq!(back, cfg);
    }
}
