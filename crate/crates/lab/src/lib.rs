//! Experiment harness around the core traffic laboratory: layered
//! configuration, seeded training/evaluation campaigns over a density
//! grid, checkpointing, and the file outputs downstream plotting reads.
//!
//! Everything here is std plumbing; the simulation, the safety filter
//! and the learner live in `lanelab-core`.

pub mod campaign;
pub mod checkpoint;
pub mod compare;
pub mod config;
pub mod outputs;
