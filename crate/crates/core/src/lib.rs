//! Trace-driven simulator for energy-aware activation of city-scale
//! environmental sensor fleets.
//!
//! The crate compares four activation policies (always-on, fixed duty
//! cycle, UCB and an adaptive utility-per-energy rule) on a shared
//! ground-truth pollutant trace and reports daily energy, event detection
//! rate and battery lifetime.

pub mod config;
pub mod engine;
pub mod hierarchy;
pub mod metrics;
pub mod policy;
pub mod rng;
pub mod trace;

pub use config::{
    drain_battery, ConfigError, ContextVector, Fleet, PollutantKind, SensorNode, SimConfig, Zone,
};
pub use engine::{mark_detections, run_simulation, EngineError, RoundLog, RunResult};
pub use metrics::{compare, Comparison, Lifetime, MetricsSummary};
pub use policy::{PolicyKind, PolicyState, SelectionResult};
pub use trace::{EventSpec, TraceError, TraceFrame, TraceSet};
