//! Online strategy synthesis (OnSS) for planar bevel-tip needle steering.
//!
//! The crate is split along the closed loop it implements:
//!
//! * [`regions`] classifies the workspace into unknown, safe, critical,
//!   detection and target regions, both for the ground truth and for the
//!   partial model the controller plans on.
//! * [`kinematics`] is the nonholonomic needle model (push, rotate, pull).
//! * [`game`] builds the discrete two-player game between the needle and
//!   bounded tissue deviations and solves it with an attractor fixpoint.
//! * [`optimizer`] scores the plans a strategy admits and picks one.
//! * [`plant`] simulates the real tissue and the noisy sensors.
//! * [`matcher`] compares observations with the active plan.
//! * [`engine`] runs the execute / observe / match / resynthesize /
//!   readjust loop for one episode.
//! * [`harness`] generates scenarios, runs parameter sweeps, aggregates
//!   metrics and renders traces.

pub mod engine;
pub mod error;
pub mod game;
pub mod harness;
pub mod kinematics;
pub mod matcher;
pub mod optimizer;
pub mod plant;
pub mod regions;

pub use error::{Error, Result};
