//! Effective settings: preset defaults, then the config file, then flags.

use std::path::Path;

use trex_core::demos::Stage;
use trex_core::kv::KvDoc;
use trex_core::policy::{LearnerConfig, PlanConfig, PlanHorizon};
use trex_core::reward::TrainConfig;
use trex_core::{Error, Result};

pub const CONFIG_SCHEMA: &str = "trex-config/1";

#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    /// Spec file path or built-in preset name.
    pub spec: String,
    pub learner: LearnerConfig,
    pub per_checkpoint: usize,
    pub stage: Stage,
    pub held_out_per_checkpoint: usize,
    pub train: TrainConfig,
    pub plan: PlanConfig,
    pub episodes: usize,
    pub sweep_levels: Vec<f64>,
    pub sweep_reps: usize,
    pub cap_ratio: f64,
    pub target_votes: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            spec: "extrap-9".into(),
            learner: LearnerConfig::default(),
            per_checkpoint: 1,
            stage: Stage::Stage3,
            held_out_per_checkpoint: 4,
            train: TrainConfig::default(),
            plan: PlanConfig::default(),
            episodes: 100,
            sweep_levels: vec![1.0, 0.95, 0.85, 0.7, 0.5],
            sweep_reps: 9,
            cap_ratio: 2.0,
            target_votes: 6,
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "spec",
    "learner.total_updates",
    "learner.checkpoint_every",
    "learner.lr",
    "learner.gamma",
    "learner.eps_start",
    "learner.eps_end",
    "demos.per_checkpoint",
    "demos.stage",
    "demos.held_out_per_checkpoint",
    "plan.horizon",
    "plan.gamma",
    "plan.tolerance",
    "plan.max_iterations",
    "eval.episodes",
    "sweep.levels",
    "sweep.reps",
    "extrapolate.cap_ratio",
    "label.target_votes",
];

fn stage_name(s: Stage) -> &'static str {
    match s {
        Stage::Stage1 => "stage1",
        Stage::Stage2 => "stage2",
        Stage::Stage3 => "stage3",
    }
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut s = Settings::default();
        if let Some(p) = path {
            let doc = KvDoc::load(p)?;
            doc.expect_schema(CONFIG_SCHEMA)?;
            s.apply(&doc)?;
        }
        Ok(s)
    }

    pub fn apply(&mut self, doc: &KvDoc) -> Result<()> {
        let mut train_keys = KvDoc::new(CONFIG_SCHEMA);
        TrainConfig::default().write_kv(&mut train_keys, "train.");
        if let Some(k) = doc.keys().find(|k| !KNOWN_KEYS.contains(k) && train_keys.get(k).is_none()) {
            return Err(Error::Invalid(format!("config: unknown key `{k}`")));
        }
        macro_rules! take {
            ($key:literal, $($field:tt)+) => {
                if let Some(v) = doc.parse_value($key)? {
                    self.$($field)+ = v;
                }
            };
        }
        if let Some(v) = doc.get("spec") {
            self.spec = v.to_string();
        }
        take!("learner.total_updates", learner.total_updates);
        take!("learner.checkpoint_every", learner.checkpoint_every);
        take!("learner.lr", learner.lr);
        take!("learner.gamma", learner.gamma);
        take!("learner.eps_start", learner.eps_start);
        take!("learner.eps_end", learner.eps_end);
        take!("demos.per_checkpoint", per_checkpoint);
        take!("demos.held_out_per_checkpoint", held_out_per_checkpoint);
        if let Some(v) = doc.get("demos.stage") {
            self.stage = v.parse()?;
        }
        if let Some(v) = doc.get("plan.horizon") {
            self.plan.horizon = parse_horizon(v)?;
        }
        take!("plan.gamma", plan.gamma);
        take!("plan.tolerance", plan.tolerance);
        take!("plan.max_iterations", plan.max_iterations);
        take!("eval.episodes", episodes);
        if let Some(v) = doc.parse_list("sweep.levels")? {
            self.sweep_levels = v;
        }
        take!("sweep.reps", sweep_reps);
        take!("extrapolate.cap_ratio", cap_ratio);
        take!("label.target_votes", target_votes);
        self.train.apply_kv(doc, "train.")
    }

    /// Every effective value; hashed into the run manifest.
    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new(CONFIG_SCHEMA);
        doc.set("spec", &self.spec);
        doc.set("learner.total_updates", self.learner.total_updates);
        doc.set("learner.checkpoint_every", self.learner.checkpoint_every);
        doc.set("learner.lr", self.learner.lr);
        doc.set("learner.gamma", self.learner.gamma);
        doc.set("learner.eps_start", self.learner.eps_start);
        doc.set("learner.eps_end", self.learner.eps_end);
        doc.set("demos.per_checkpoint", self.per_checkpoint);
        doc.set("demos.stage", stage_name(self.stage));
        doc.set("demos.held_out_per_checkpoint", self.held_out_per_checkpoint);
        doc.set(
            "plan.horizon",
            match self.plan.horizon {
                PlanHorizon::Episode => "episode",
                PlanHorizon::Infinite => "infinite",
            },
        );
        doc.set("plan.gamma", self.plan.gamma);
        doc.set("plan.tolerance", self.plan.tolerance);
        doc.set("plan.max_iterations", self.plan.max_iterations);
        doc.set("eval.episodes", self.episodes);
        let levels: Vec<String> = self.sweep_levels.iter().map(f64::to_string).collect();
        doc.set("sweep.levels", levels.join(" "));
        doc.set("sweep.reps", self.sweep_reps);
        doc.set("extrapolate.cap_ratio", self.cap_ratio);
        doc.set("label.target_votes", self.target_votes);
        self.train.write_kv(&mut doc, "train.");
        doc
    }
}

pub fn parse_horizon(s: &str) -> Result<PlanHorizon> {
    match s {
        "episode" => Ok(PlanHorizon::Episode),
        "infinite" => Ok(PlanHorizon::Infinite),
        _ => Err(Error::Invalid(format!("unknown plan horizon `{s}` (expected episode or infinite)"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_defaults_and_round_trips() {
        let doc = KvDoc::parse("schema = trex-config/1\ntrain.lr = 0.001\ntrain.hidden = 8 8\nsweep.reps = 3\n").unwrap();
        let mut s = Settings::default();
        s.apply(&doc).unwrap();
        assert_eq!(s.train.lr, 1e-3);
        assert_eq!(s.train.hidden, vec![8, 8]);
        assert_eq!(s.sweep_reps, 3);
        let mut back = Settings::default();
        back.apply(&s.to_kv()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let doc = KvDoc::parse("schema = trex-config/1\nlearner.speed = 3\n").unwrap();
        assert!(Settings::default().apply(&doc).is_err());
        let doc = KvDoc::parse("schema = trex-config/1\ntrain.speed = 3\n").unwrap();
        assert!(Settings::default().apply(&doc).is_err());
    }
}
