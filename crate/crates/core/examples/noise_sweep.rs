//! A reduced ranking-noise sweep: two repetitions per level with short
//! training, so it finishes in a couple of minutes.

use trex_core::demos::{generate_demos, train_demonstrator};
use trex_core::eval::{noise_sweep, NoiseSweepConfig};
use trex_core::policy::LearnerConfig;
use trex_core::presets;
use trex_core::reward::TrainConfig;

fn main() -> trex_core::Result<()> {
    let spec = presets::extrap9();
    let checkpoints = train_demonstrator(&spec, &LearnerConfig::default(), 0)?;
    let mut demos = generate_demos(&spec, &checkpoints, 1, 0)?;
    demos.sort_by(|a, b| a.gt_return.total_cmp(&b.gt_return));
    let cfg = NoiseSweepConfig {
        reps: 2,
        train: TrainConfig { train_steps: 2000, ensemble_size: 3, ..TrainConfig::default() },
        ..NoiseSweepConfig::default()
    };
    let sweep = noise_sweep(&spec, &demos, &cfg)?;
    print!("{}", sweep.to_csv());
    Ok(())
}
