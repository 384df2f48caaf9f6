//! Experiment harness: configuration, artifact layout, plotting, and the
//! six commands that take a config from raw pixels to a report bundle.
//!
//! The harness is deliberately file-driven. Each command owns one stage,
//! reads its inputs from the run directory, and skips work whose outputs
//! are already present and fresh, so a chain of commands is both
//! resumable and reproducible.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod plot;

pub use artifacts::Layout;
pub use commands::{cmd_ablate, cmd_attack, cmd_eval, cmd_gen_data, cmd_report, cmd_train};
pub use config::{AblationSpec, ExperimentConfig, SweepParameter, SweepValue};
