//! Exact mixed-integer input constraints for feedback-linearized control.
//!
//! Feedback linearization turns a nonlinear plant into a chain of
//! integrators `ż = Az + Bv`, but the physical input bound `|u| ≤ u_max`
//! becomes the nonlinear set `|Φ(z, v)| ≤ u_max`. This crate fits a ReLU
//! network to `Φ`, bounds the fitting error by particle swarm search, and
//! compiles the tightened surrogate constraint `|Φ_NN(z, v)| ≤ u_max − ε`
//! into big-M mixed-integer linear rows. The rows are consumed by a CLF-CBF
//! one-step controller and by a linear MPC, both solved with an in-crate
//! branch-and-bound.
//!
//! Module map:
//! - [`relu_net`]: network type, evaluation, training, JSON persistence
//! - [`dynamics`]: mass-spring-damper and 1-D quadrotor plants
//! - [`encoder`]: bound tightening, big-M encoding, LP export
//! - [`errbound`]: error-bound estimation and validation
//! - [`misolver`]: relaxations and branch-and-bound
//! - [`controllers`]: CLF-CBF and MPC laws
//! - [`harness`]: scenarios, closed-loop simulation, pipeline, logs

pub mod controllers;
pub mod dynamics;
pub mod encoder;
pub mod errbound;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod misolver;
pub mod relu_net;

pub use error::{Error, Result};
pub use geometry::BoxDomain;
