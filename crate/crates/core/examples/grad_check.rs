//! Compares backprop gradients of the ranking loss with central differences
//! on random nets of the default architecture.

use trex_core::presets;
use trex_core::reward::{gradient_check, TrainConfig};

fn main() -> trex_core::Result<()> {
    let sizes = TrainConfig::default().layer_sizes(presets::extrap9().num_features);
    let errors = gradient_check(&sizes, 5, 8, 6, 0)?;
    for (k, e) in errors.iter().enumerate() {
        println!("net {k}: max relative error {e:.3e}");
    }
    Ok(())
}
