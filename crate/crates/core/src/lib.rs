//! Obstacle avoidance between convex polytopes with nonsmooth control barrier
//! functions built from the dual of the minimum-distance problem.
//!
//! The pieces, bottom up:
//!
//! - [`qpsolver`]: dense active-set QP/LP solver used by everything else.
//! - [`geometry`]: validated H-rep polytopes, placement, face-matrix rates.
//! - [`distance`]: squared distance, dual multipliers, active sets.
//! - [`ncbf`]: derivative LP and the QP safety filter.
//! - [`braking`]: swept-hull distance and the centralized fleet controller.
//! - [`sim`], [`scenario`], [`trace`]: closed-loop runs from JSON scenarios.
//! - [`oracle`]: solver-free reference computations for testing.

pub mod braking;
pub mod distance;
pub mod error;
pub mod geometry;
pub mod ncbf;
pub mod oracle;
pub mod par;
pub mod qpsolver;
pub mod scenario;
pub mod sim;
pub mod trace;

pub use error::{Error, Result};
pub use par::Execution;
