//! A desk-scale laboratory for adversarial attacks on dual-encoder
//! image–text retrieval.
//!
//! The crate trains small contrastive encoder pairs on a synthetic
//! shape-scene dataset, then runs a family of retrieval attacks against
//! them — iterative sign ascent, momentum variants, separate and sequential
//! image/text attacks, and a shuffle-and-sample attack that augments the
//! gradient estimate with locally shuffled copies of the current iterate
//! and scores caption substitutions against sampled image neighborhoods.
//! An evaluation layer measures recall degradation and cross-model
//! transfer, and a harness reproduces the full experiment chain from one
//! TOML config.
//!
//! Everything is deterministic: all randomness derives from a root seed
//! through named paths ([`rng::SeedPath`]), so parallel runs, reruns, and
//! single-pair replays agree bit for bit.

pub mod attacks;
pub mod data;
pub mod error;
pub mod eval;
pub mod grid;
pub mod harness;
pub mod models;
pub mod npy;
pub mod rng;
pub mod transforms;

pub use error::{LabError, Result};
pub use grid::ImageGrid;
