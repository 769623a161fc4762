//! Scenario runner for constrained contraction analysis.
//!
//! Scenarios are JSON files naming built-in model families and their
//! coefficients. A run writes a trajectory CSV, a bounds JSON file and a
//! report, all with fixed 17-digit number formatting.

pub mod bundled;
pub mod error;
pub mod model;
pub mod output;
pub mod runner;
pub mod scenario;

pub use bundled::{list_scenarios, load_bundled};
pub use error::{CliError, Result};
pub use runner::{run, RunOptions, RunReport};
pub use scenario::{load_scenario, parse_scenario, Scenario};

use std::path::Path;

/// Loads a scenario file, falling back to a bundled scenario of that name.
pub fn resolve_scenario(arg: &str) -> Result<Scenario> {
    let path = Path::new(arg);
    if path.exists() {
        return load_scenario(path);
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or(arg);
    match bundled::bundled_source(stem) {
        Some(_) => load_bundled(stem),
        None => load_scenario(path),
    }
}
