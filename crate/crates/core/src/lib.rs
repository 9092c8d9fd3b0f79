//! Carbon- and cost-aware placement of microservice DAGs across cloud regions.
//!
//! The crate holds the application and infrastructure models, the traffic
//! profiler and forecaster, the placement optimizer with its baselines, and a
//! trace-driven simulator that ties them together.

pub mod app;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod fixtures;
pub mod forecast;
pub mod gen;
pub mod infra;
pub mod optimizer;
pub mod profiler;
pub mod seed;
pub mod sim;
pub mod strategy;
pub mod timefmt;

pub use app::{activation_stages, ActivationSchedule, AppDag, AppSpec, CallEdge, Microservice, ServiceKind, ServiceSpec};
pub use error::{Error, Result};
pub use eval::{e2e_latency, violation_rate, Assignment, Evaluator, RateInputs, Rates, ServiceProfile};
pub use forecast::{GbdtConfig, GbdtModel, TrafficTrace};
pub use infra::{CarbonTrace, Infra, InstanceType, PricingCatalog, Region, RegionSet, RttMatrix};
pub use optimizer::{optimize, brute_force_optimize, GaConfig, OptContext, OptResult, PinPolicy, Placement, Weights};
pub use profiler::{BucketConfig, BucketTable, ProfileMetrics, ProfileSample};
pub use sim::{simulate, ForecastMode, RunOptions, RunOutput, Scenario, ScenarioSpec, Summary};
pub use strategy::{by_name, Decision, DecisionInput, Strategy, STRATEGY_NAMES};
