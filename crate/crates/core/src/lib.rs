//! Core of a safety-filtered traffic laboratory.
//!
//! A behavior policy (learned or hand-written) proposes discrete lane
//! decisions at 2 Hz; a barrier-based quadratic program filters the
//! resulting continuous controls at 100 Hz so that the closed loop never
//! leaves a designated safe set. The crate is organized bottom-up:
//!
//! * [`dynamics`]: discrete-time kinematic bicycle model.
//! * [`qp`]: exact active-set solver for the tiny dense QPs used here.
//! * [`cbf`]: affine barrier functions, the three safety QPs built from
//!   them, and forward-invariance certification.
//! * [`planner`]: per-action trajectory references and their reduction to
//!   bicycle inputs.
//! * [`supervisor`]: feasibility vetting of proposed actions, fallback
//!   ordering and the emergency stop.
//! * [`env`]: multi-lane ring road with car-following baseline traffic,
//!   epoch stepping and metrics.
//! * [`agent`]: observations, shared neighbor information, replay and the
//!   Q-network trained on the driving reward.
//! * [`rngs`]: deterministic, repositionable random streams.
//!
//! The crate is `no_std` (alloc required); everything that touches files,
//! clocks or threads lives in the companion `lanelab` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod agent;
pub mod cbf;
pub mod dynamics;
pub mod env;
pub mod nn;
pub mod planner;
pub mod qp;
pub mod rngs;
pub mod supervisor;
