//! Exact analysis and policy-gradient learning for tabular stochastic games
//! with random stopping.
//!
//! The crate is organised bottom-up: [`game`] and [`policy`] hold the data
//! model, [`exact`] solves the linear systems behind values, visitation
//! measures and gradients, [`geometry`] handles simplex projections and
//! first/second-order stationarity checks, [`simulation`] and [`estimators`]
//! produce sampled gradient signals, [`learners`] runs the projected and lazy
//! update loops, and [`analysis`] classifies equilibria and summarises runs.

pub mod analysis;
pub mod error;
pub mod estimators;
pub mod exact;
pub mod game;
pub mod geometry;
pub mod learners;
pub mod policy;
pub mod simulation;

pub use error::{Error, ErrorClass, Result};
pub use game::GameSpec;
pub use policy::{PolicyProfile, PolicyShape};
