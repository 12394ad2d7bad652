//! Stochastic "quantum jump" dynamics over finite-dimensional systems.
//!
//! - [`hilbert`]: dense states, operators, projectors and propagators.
//! - [`pilot`]: Schrödinger integration of the pilot state.
//! - [`beables`]: viable families, Bell currents and rates, visible-state sampling.
//! - [`zeno`]: repeated projective measurement (watched pot).
//! - [`decay`]: an unstable level coupled to a dispersing chain.
//! - [`ion`]: three-level ion with shelving and telegraph fluorescence.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beables;
pub mod decay;
pub mod error;
pub mod hilbert;
pub mod ion;
pub mod pilot;
pub mod stats;
pub mod zeno;

pub use error::{Error, Result};
pub use hilbert::{C64, Operator, Projector, StateVector};
pub use pilot::{HamiltonianSchedule, Method, TimeGrid, Trajectory};
