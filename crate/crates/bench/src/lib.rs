//! Scenario fixtures for the benchmarks.

use std::path::PathBuf;

use p2pgrid_core::{prepare, RunOptions, ScenarioSpec};

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../../data/scenarios/{name}.json"))
}

/// A shipped scenario with its attacks applied.
pub fn load(name: &str) -> ScenarioSpec {
    prepare(scenario_path(name), &RunOptions::default()).unwrap_or_else(|e| panic!("{name}: {e}"))
}
