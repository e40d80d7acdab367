//! Simulation and planning library for controlled dynamics under model
//! uncertainty.
//!
//! The central object is a belief: a weighted ensemble of candidate vector
//! fields together with an anchor field and an exposure record of where the
//! state space has been visited. Exposure attenuates how far candidate
//! predictions may stray from the anchor, so planning, value iteration, and
//! closed-loop simulation all operate on dynamics that sharpen along the
//! realized trajectory.

#![forbid(unsafe_code)]

pub mod belief;
pub mod benchmarks;
pub mod control_opt;
pub mod cost;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod hjb;
pub mod simulator;
pub mod vecmath;
pub mod verify;

pub use belief::{BeliefState, Candidate, ExposureField, LearningKernel};
pub use control_opt::{ControlSignal, PlannerSettings, RelaxedControl};
pub use cost::{CostSpec, DiscountSpec, StageCost};
pub use dynamics::{DynamicsSpec, Trajectory, VectorField};
pub use error::{Error, Result};
pub use grid::GridSpec;
pub use vecmath::Rect;
