//! Library side of the `femlab` command: argument types, run directories,
//! sweeps and the exit-code policy.

pub mod args;
pub mod commands;
pub mod config;
pub mod failure;
pub mod run;
pub mod sweep;

use std::path::PathBuf;

/// Overrides the directory under which default run and sweep directories go.
pub const OUTPUT_ROOT_ENV: &str = "FEMLAB_OUTPUT_ROOT";

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

pub fn tool_version() -> String {
    format!("femlab {}", env!("CARGO_PKG_VERSION"))
}
