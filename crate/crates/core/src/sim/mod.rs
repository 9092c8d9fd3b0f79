//! Trace-driven simulation of a placement strategy over a scenario horizon.

pub mod metrics;
pub mod run;
pub mod scenario;

pub use metrics::{read_events, stability_summary, Event, EventKind, Stability, Summary, TickRecord};
pub use run::{simulate, RunOptions, RunOutput};
pub use scenario::{merge_json, ForecastMode, ForecasterSpec, Horizon, ProfileSource, Scenario, ScenarioSpec};
