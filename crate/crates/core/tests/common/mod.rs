//! Shared fixtures, independent oracles and the acceptance checks.
#![allow(dead_code)]

pub mod criteria;
pub mod oracle;

use std::path::PathBuf;

use cadre_core::config::{parse_config, ExperimentConfig};

pub const TIMESTAMP: &str = "2026-01-01T00:00:00Z";

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn config_path(name: &str) -> PathBuf {
    repo_root().join("configs").join(name)
}

pub fn load(name: &str) -> ExperimentConfig {
    parse_config(&config_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}
