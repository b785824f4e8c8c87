//! Reference implementations for cross-checking the optimized crates.
//!
//! Everything in here favors obviousness over speed: geometric
//! constructions instead of active-set bookkeeping, scalar loops instead
//! of fused updates, finite differences instead of backpropagation. The
//! point is to disagree with the production code when the production
//! code is wrong, so nothing here shares algorithms with it.

pub mod nn_ref;
pub mod qp_oracle;
pub mod systems;
