//! Chance-constrained trajectory planning around uncertain moving obstacles.
//!
//! The crate turns sampled forecasts of other vehicles into mixed-binary
//! linear programs whose solutions carry a probabilistic collision-avoidance
//! certificate. Two formulations are provided:
//!
//! * **Scenario**: every forecast sample becomes a keep-out disjunction; the
//!   sample count is chosen by [`bounds::min_samples`] so that, with
//!   confidence at least `1 - beta`, the optimized trajectory violates the
//!   chance constraint with probability at most `epsilon`.
//! * **Cluster**: samples are grouped per vehicle ([`clustering`]), each
//!   group is wrapped in a fixed-normal polytope ([`geometry`]), and the
//!   trajectory avoids the polytopes; the per-group risk shares are chosen by
//!   [`bounds::allocate_uniform`] or [`bounds::allocate_weighted`] so that
//!   the shares sum back to the requested budget.
//!
//! Both reduce to mixed-binary linear programs solved exactly by the
//! in-crate simplex and branch-and-bound ([`milp`]). Randomness comes from a
//! counter-based generator ([`rng`]) keyed by `(seed, purpose, index)`, so
//! results are reproducible and independent of evaluation order — parallel
//! and sequential runs produce bit-identical output.

pub mod bounds;
pub mod clustering;
pub mod config;
pub mod error;
pub mod geometry;
pub mod milp;
pub mod planner;
pub mod validation;
pub mod prediction;
pub mod rng;

pub use error::{Error, Result};
