//! Experiment harness: scenario generation, sweeps, metrics and rendering.

pub mod batch;
pub mod render;
pub mod scenario;

pub use batch::{default_sweep, run_batch, Axis, MetricsTable, SweepPoint};
pub use render::render_trace;
pub use scenario::{generate_scenario, Generator, Scenario, ScenarioParams};
