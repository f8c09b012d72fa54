//! Oracles and property checks shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

pub mod invariants;
pub mod oracles;

use std::path::PathBuf;

use softtraj::config::RunConfig;

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

pub fn load_config(name: &str) -> RunConfig {
    RunConfig::load(&config_path(name)).unwrap_or_else(|e| panic!("loading {name}: {e}"))
}
