//! Curative curtailment for distribution grids.
//!
//! The crate covers the full pipeline: a grid data model with a JSON file
//! format, a Newton-Raphson AC power flow, an optimal-power-flow baseline,
//! a supply-task dataset factory with augmentation, a small from-scratch
//! MLP stack, a partially observable grid environment with a DDPG agent,
//! and an evaluation harness that compares agent and OPF decisions.
//!
//! See the `examples/` directory for one runnable example per capability
//! and the `gridcurt` binary for the file-based pipeline.

pub mod error;
pub mod eval;
pub mod grid;
pub mod nn;
pub mod opf;
pub mod powerflow;
pub mod rl;
pub mod scenario;
pub mod synth;

pub use error::{Error, Result};
