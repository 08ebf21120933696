//! Numerical engine for topic-layered multidimensional opinion dynamics with
//! confirmation-bias source influence.
//!
//! Agents hold opinion vectors across coupled topic layers, revert partially
//! toward innate opinions, average over a static social graph, and weigh
//! external information sources by state-dependent confirmation-bias rules.
//! The crate simulates the dynamics, certifies contraction, computes exact
//! and bounded fixed points for the affine rule, calibrates parameters from
//! longitudinal wave data, and optimizes source strategies over box
//! constraints.
//!
//! The `parallel` feature (on by default) runs ensembles, candidate regime
//! solves, and objective sweeps on a rayon pool; disabling it yields a fully
//! sequential build with identical results.

pub mod calibration;
pub mod design;
pub mod dynamics;
pub mod error;
pub mod exec;
pub mod fixedpoint;
pub mod io;
pub mod model;
pub mod rule;
pub mod stacked;

pub use error::{Error, Result};
pub use model::{validate, AssumptionReport, MultilayerModel};
pub use rule::SourceRule;
pub use stacked::StackedState;
