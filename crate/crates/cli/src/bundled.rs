//! Scenarios shipped with the binary.

use std::path::Path;

use crate::error::{CliError, Result};
use crate::scenario::{parse_scenario, Scenario};

const BUNDLED: &[(&str, &str)] = &[
    ("example1_parabola", include_str!("../scenarios/example1_parabola.json")),
    ("example2_moving_circle", include_str!("../scenarios/example2_moving_circle.json")),
    ("example3_envelope", include_str!("../scenarios/example3_envelope.json")),
    ("example4_double_slit", include_str!("../scenarios/example4_double_slit.json")),
    ("example5_single_slit", include_str!("../scenarios/example5_single_slit.json")),
];

pub fn list_scenarios() -> Vec<&'static str> {
    BUNDLED.iter().map(|(name, _)| *name).collect()
}

pub fn bundled_source(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

pub fn load_bundled(name: &str) -> Result<Scenario> {
    let text = bundled_source(name).ok_or_else(|| CliError::UnknownScenario(name.to_string()))?;
    parse_scenario(text, Path::new(&format!("<bundled>/{name}.json")))
}
