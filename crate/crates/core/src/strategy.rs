//! Placement strategies driven by the simulator.
//!
//! Every strategy answers the same question: given the current placement and
//! the conditions at a trigger, where should each service run next.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::app::{ActivationSchedule, AppDag};
use crate::error::{Error, Result};
use crate::eval::{Assignment, ServiceProfile};
use crate::infra::Infra;
use crate::optimizer::{self, GaConfig, OptContext, PinPolicy, Weights};

/// Conditions at a decision point.
#[derive(Debug, Clone)]
pub struct DecisionInput<'a> {
    pub dag: &'a AppDag,
    pub schedule: &'a ActivationSchedule,
    pub infra: &'a Infra,
    pub base: usize,
    pub allowed: &'a [usize],
    pub ci: &'a [f64],
    pub profiles: &'a [ServiceProfile],
    pub traffic: f64,
    pub request_payload_gb: f64,
    pub image_gb: f64,
    pub slo_ms: f64,
    pub weights: Weights,
    pub current: &'a [usize],
    /// Fresh seed for this decision.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decision {
    #[serde(skip)]
    pub assignment: Assignment,
    /// Regions holding image replicas while this placement is live.
    pub replica_regions: Vec<usize>,
    pub objective: Option<f64>,
    pub evaluations: usize,
    pub search_space_log10: f64,
    pub movable: usize,
    pub solve_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub samples: usize,
    /// Relative objective improvement required to switch placements.
    pub hysteresis: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { samples: 200, hysteresis: 0.1 }
    }
}

/// Settings a strategy may pick up from the scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyConfig {
    pub ga: GaConfig,
    pub pin: PinPolicy,
    pub sampling: SamplingConfig,
}

pub trait Strategy: Send {
    fn name(&self) -> &str;
    fn configure(&mut self, cfg: &StrategyConfig);
    fn decide(&mut self, input: &DecisionInput) -> Result<Decision>;
}

fn opt_context<'a>(input: &DecisionInput<'a>, ga: GaConfig, pin: PinPolicy, filter: bool) -> OptContext<'a> {
    OptContext {
        dag: input.dag,
        schedule: input.schedule,
        infra: input.infra,
        base: input.base,
        allowed: input.allowed.to_vec(),
        ci: input.ci.to_vec(),
        profiles: input.profiles.to_vec(),
        traffic: input.traffic,
        request_payload_gb: input.request_payload_gb,
        image_gb: input.image_gb,
        slo_ms: input.slo_ms,
        weights: input.weights,
        pin,
        filter_regions: filter,
        ga: GaConfig { seed: input.seed, ..ga },
    }
}

fn region_indices(infra: &Infra, ids: &[String]) -> Vec<usize> {
    ids.iter().map(|id| infra.index_of(id).expect("retained region exists")).collect()
}

/// Genetic search, optionally with region filtering and activation pinning.
#[derive(Debug, Clone)]
pub struct GaStrategy {
    name: String,
    filter: bool,
    pinning: bool,
    exhaustive: bool,
    ga: GaConfig,
    pin: PinPolicy,
}

impl GaStrategy {
    pub fn new(name: &str, filter: bool, pinning: bool) -> Self {
        GaStrategy { name: name.into(), filter, pinning, exhaustive: false, ga: GaConfig::default(), pin: PinPolicy::default() }
    }

    /// Both prunings on.
    pub fn aceso() -> Self {
        Self::new("aceso", true, true)
    }

    /// Structural pinning only, over every allowed region.
    pub fn vanilla() -> Self {
        Self::new("vanilla-ga", false, false)
    }

    /// Exhaustive search over the pruned space.
    pub fn brute_force() -> Self {
        GaStrategy { exhaustive: true, ..Self::new("brute-force", true, true) }
    }
}

impl Strategy for GaStrategy {
    fn name(&self) -> &str {
        &self.name
    }

    fn configure(&mut self, cfg: &StrategyConfig) {
        self.ga = cfg.ga;
        self.pin = cfg.pin;
    }

    fn decide(&mut self, input: &DecisionInput) -> Result<Decision> {
        let pin = PinPolicy { enabled: self.pinning && self.pin.enabled, ..self.pin };
        let ctx = opt_context(input, self.ga, pin, self.filter);
        let r = if self.exhaustive { optimizer::brute_force_optimize(&ctx)? } else { optimizer::optimize(&ctx)? };
        Ok(Decision {
            replica_regions: region_indices(input.infra, &r.retained),
            objective: Some(r.objective),
            evaluations: r.evaluations,
            search_space_log10: r.search_space_log10,
            movable: r.movable,
            solve_time: r.solve_time,
            assignment: r.assignment,
        })
    }
}

/// Everything stays in the base region.
#[derive(Debug, Clone, Default)]
pub struct StaticStrategy;

impl Strategy for StaticStrategy {
    fn name(&self) -> &str {
        "static"
    }

    fn configure(&mut self, _cfg: &StrategyConfig) {}

    fn decide(&mut self, input: &DecisionInput) -> Result<Decision> {
        Ok(Decision {
            assignment: vec![input.base; input.dag.len()],
            replica_regions: vec![input.base],
            objective: None,
            evaluations: 0,
            search_space_log10: 0.0,
            movable: 0,
            solve_time: 0.0,
        })
    }
}

/// A fixed placement given as service id to region index; unlisted services
/// stay in the base region.
#[derive(Debug, Clone, Default)]
pub struct FixedStrategy {
    name: String,
    regions: std::collections::BTreeMap<u32, usize>,
}

impl FixedStrategy {
    pub fn new(name: &str, regions: std::collections::BTreeMap<u32, usize>) -> Self {
        FixedStrategy { name: name.to_string(), regions }
    }
}

impl Strategy for FixedStrategy {
    fn name(&self) -> &str {
        &self.name
    }

    fn configure(&mut self, _cfg: &StrategyConfig) {}

    fn decide(&mut self, input: &DecisionInput) -> Result<Decision> {
        let assignment: Assignment = input
            .dag
            .services()
            .iter()
            .map(|s| match self.regions.get(&s.id) {
                Some(&r) if !s.structurally_pinned => r,
                _ => input.base,
            })
            .collect();
        let mut replica_regions = assignment.clone();
        replica_regions.push(input.base);
        replica_regions.sort_unstable();
        replica_regions.dedup();
        Ok(Decision {
            assignment,
            replica_regions,
            objective: None,
            evaluations: 0,
            search_space_log10: 0.0,
            movable: 0,
            solve_time: 0.0,
        })
    }
}

/// Biased random sampling with a conservative switch rule: regions are drawn
/// with probability proportional to 1 / (CI x price), and a new placement is
/// adopted only if it beats the current one by more than the hysteresis margin.
#[derive(Debug, Clone, Default)]
pub struct SamplingStrategy {
    cfg: SamplingConfig,
}

impl SamplingStrategy {
    pub fn new(cfg: SamplingConfig) -> Self {
        SamplingStrategy { cfg }
    }
}

impl Strategy for SamplingStrategy {
    fn name(&self) -> &str {
        "sampling"
    }

    fn configure(&mut self, cfg: &StrategyConfig) {
        self.cfg = cfg.sampling;
    }

    fn decide(&mut self, input: &DecisionInput) -> Result<Decision> {
        let started = Instant::now();
        let pin = PinPolicy { enabled: false, ..PinPolicy::default() };
        let ctx = opt_context(input, GaConfig::default(), pin, false);
        let space = optimizer::prepare(&ctx)?;
        let prices = input.infra.pricing.reference_prices();
        let weights: Vec<f64> = space
            .retained
            .iter()
            .map(|&r| 1.0 / (input.ci[r] * prices[r]).max(1e-9))
            .collect();
        let total: f64 = weights.iter().sum();
        let mut rng = ChaCha8Rng::seed_from_u64(input.seed);
        let mut draw = || {
            let mut u = rng.random::<f64>() * total;
            for (k, w) in weights.iter().enumerate() {
                if u < *w {
                    return k;
                }
                u -= w;
            }
            weights.len() - 1
        };
        let mut best: Option<(Assignment, f64)> = None;
        for _ in 0..self.cfg.samples.max(1) {
            let genes: Vec<usize> = (0..space.movable.len()).map(|_| draw()).collect();
            let a = space.assignment(&genes);
            let f = space.fitness(&a);
            if f.is_finite() && best.as_ref().is_none_or(|b| f < b.1) {
                best = Some((a, f));
            }
        }
        let current_fit = space.fitness(input.current);
        let base = space.evaluator.all_in_base();
        let (assignment, objective) = match best {
            Some((a, f)) if !current_fit.is_finite() || f < current_fit * (1.0 - self.cfg.hysteresis) => (a, f),
            _ if current_fit.is_finite() => (input.current.to_vec(), current_fit),
            _ => {
                let f = space.fitness(&base);
                if !f.is_finite() {
                    return Err(Error::Infeasible(format!("no sampled placement meets the {} ms SLO", input.slo_ms)));
                }
                (base, f)
            }
        };
        Ok(Decision {
            assignment,
            replica_regions: space.retained.clone(),
            objective: Some(objective),
            evaluations: self.cfg.samples.max(1),
            search_space_log10: space.log10_size(),
            movable: space.movable.len(),
            solve_time: started.elapsed().as_secs_f64(),
        })
    }
}

pub const STRATEGY_NAMES: [&str; 5] = ["aceso", "static", "vanilla-ga", "sampling", "brute-force"];

pub fn by_name(name: &str) -> Result<Box<dyn Strategy>> {
    Ok(match name {
        "aceso" => Box::new(GaStrategy::aceso()),
        "static" => Box::new(StaticStrategy),
        "vanilla-ga" => Box::new(GaStrategy::vanilla()),
        "sampling" => Box::new(SamplingStrategy::default()),
        "brute-force" => Box::new(GaStrategy::brute_force()),
        other => return Err(Error::UnknownStrategy(other.to_string())),
    })
}
