//! Prints a built-in gridworld preset in the spec file format.
//!
//! `cargo run --example presets -- extrap-9 > specs/extrap-9`

use trex_core::presets;

fn main() {
    let name = std::env::args().nth(1).unwrap_or_else(|| "extrap-9".into());
    let Some(spec) = presets::by_name(&name) else {
        eprintln!("unknown preset `{name}`");
        std::process::exit(2);
    };
    print!("{}", spec.to_kv().render());
}
