//! Placement optimization.
//!
//! [`prepare`] turns a decision context into a [`SearchSpace`]: regions are
//! filtered, late stages optionally pinned, and an [`Evaluator`] is built at
//! the decision's traffic level. [`optimize`] runs the genetic algorithm over
//! that space and [`brute_force_optimize`] enumerates it.

pub mod brute;
pub mod filter;
pub mod ga;
pub mod objective;
pub mod pinning;
pub mod triggers;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::Serialize;

use crate::app::{ActivationSchedule, AppDag};
use crate::error::{Error, Result};
use crate::eval::{Assignment, Evaluator, RateInputs, ServiceProfile};
use crate::infra::Infra;

pub use brute::search_space_log10;
pub use filter::region_filter;
pub use ga::{GaConfig, StopReason};
pub use objective::{Objective, ObjectiveValue, Weights};
pub use pinning::{pin_services, PinPolicy};
pub use triggers::{carbon_trigger, workload_trigger};

/// Movable services mapped to regions; everything else stays in the base.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Placement {
    pub assign: BTreeMap<u32, String>,
    pub base_region: String,
}

impl Placement {
    pub fn from_assignment(dag: &AppDag, infra: &Infra, base: usize, movable: &[usize], a: &[usize]) -> Self {
        Placement {
            assign: movable
                .iter()
                .map(|&m| (dag.services()[m].id, infra.regions.get(a[m]).id.clone()))
                .collect(),
            base_region: infra.regions.get(base).id.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OptResult {
    pub placement: Placement,
    pub objective: f64,
    /// gCO2eq per hour.
    pub carbon: f64,
    /// USD per hour.
    pub cost: f64,
    pub latency: f64,
    pub solve_time: f64,
    pub evaluations: usize,
    pub search_space_log10: f64,
    pub generations: usize,
    pub stop: StopReason,
    pub movable: usize,
    pub retained: Vec<String>,
    #[serde(skip)]
    pub assignment: Assignment,
}

/// Everything a single placement decision depends on.
#[derive(Debug, Clone)]
pub struct OptContext<'a> {
    pub dag: &'a AppDag,
    pub schedule: &'a ActivationSchedule,
    pub infra: &'a Infra,
    pub base: usize,
    /// Candidate regions, including the base.
    pub allowed: Vec<usize>,
    /// Carbon intensity of every region in `infra`.
    pub ci: Vec<f64>,
    /// Per-service profiles at `traffic`, by dag index.
    pub profiles: Vec<ServiceProfile>,
    pub traffic: f64,
    pub request_payload_gb: f64,
    pub image_gb: f64,
    pub slo_ms: f64,
    pub weights: Weights,
    pub pin: PinPolicy,
    pub filter_regions: bool,
    pub ga: GaConfig,
}

pub struct SearchSpace<'a> {
    pub evaluator: Evaluator<'a>,
    pub objective: Objective,
    pub slo_ms: f64,
    /// Dag indices of the genes.
    pub movable: Vec<usize>,
    /// Region indices of the alleles.
    pub retained: Vec<usize>,
    pub base_latency: f64,
}

impl SearchSpace<'_> {
    pub fn assignment(&self, genes: &[usize]) -> Assignment {
        let mut a = self.evaluator.all_in_base();
        for (&m, &g) in self.movable.iter().zip(genes) {
            a[m] = self.retained[g];
        }
        a
    }

    pub fn is_feasible(&self, a: &[usize]) -> bool {
        self.evaluator.latency(a) <= self.slo_ms * (1.0 + 1e-12)
    }

    /// Objective, or +inf for placements that break the SLO or cannot be priced.
    pub fn fitness(&self, a: &[usize]) -> f64 {
        if !self.is_feasible(a) {
            return f64::INFINITY;
        }
        let cost = self.evaluator.cost(a);
        if !cost.is_finite() {
            return f64::INFINITY;
        }
        self.objective.value(self.evaluator.carbon(a), cost).objective
    }

    pub fn log10_size(&self) -> f64 {
        search_space_log10(self.movable.len(), self.retained.len())
    }

    fn result(&self, a: Assignment, evaluations: usize, generations: usize, stop: StopReason, started: Instant) -> OptResult {
        let ev = &self.evaluator;
        let carbon = ev.carbon(&a);
        let cost = ev.cost(&a);
        let infra_ids = |r: &usize| self.region_id(*r);
        OptResult {
            placement: self.placement(&a),
            objective: self.objective.value(carbon, cost).objective,
            carbon,
            cost,
            latency: ev.latency(&a),
            solve_time: started.elapsed().as_secs_f64(),
            evaluations,
            search_space_log10: self.log10_size(),
            generations,
            stop,
            movable: self.movable.len(),
            retained: self.retained.iter().map(infra_ids).collect(),
            assignment: a,
        }
    }

    fn region_id(&self, r: usize) -> String {
        self.infra().regions.get(r).id.clone()
    }

    fn infra(&self) -> &Infra {
        self.evaluator.infra()
    }

    pub fn placement(&self, a: &[usize]) -> Placement {
        Placement::from_assignment(self.evaluator.dag(), self.infra(), self.evaluator.base(), &self.movable, a)
    }
}

/// Applies region filtering and pinning and builds the evaluator.
pub fn prepare<'a>(ctx: &OptContext<'a>) -> Result<SearchSpace<'a>> {
    ctx.weights.validate()?;
    ctx.pin.validate()?;
    ctx.ga.validate()?;
    if !(ctx.slo_ms > 0.0) {
        return Err(Error::InvalidConfig(format!("slo {} must be positive", ctx.slo_ms)));
    }
    if ctx.weights.is_degenerate() {
        log::warn!("both objective weights are zero; every placement scores 0");
    }
    let retained = if ctx.filter_regions {
        let prices = ctx.infra.pricing.reference_prices();
        let conservative = ctx.weights.w_carbon > 0.0 && ctx.weights.w_cost > 0.0;
        region_filter(ctx.base, &ctx.allowed, &ctx.ci, &prices, conservative)?
    } else {
        if !ctx.allowed.contains(&ctx.base) {
            return Err(Error::Validation("base region is not among the allowed regions".into()));
        }
        ctx.allowed.clone()
    };
    let inputs = RateInputs {
        traffic: ctx.traffic,
        request_payload_gb: ctx.request_payload_gb,
        image_gb: ctx.image_gb,
        replica_regions: retained.len(),
    };
    let evaluator = Evaluator::new(ctx.dag, ctx.infra, ctx.base, &ctx.profiles, &ctx.ci, inputs)?;
    let base_assign = evaluator.all_in_base();
    let base_latency = evaluator.latency(&base_assign);
    let objective = Objective::new(ctx.weights, evaluator.carbon(&base_assign), evaluator.cost(&base_assign));

    let movable_ids = if ctx.pin.enabled {
        pin_services(ctx.dag, ctx.schedule, base_latency, ctx.slo_ms, &ctx.pin)?
    } else {
        ctx.dag.unpinned_ids().into_iter().collect()
    };
    let movable = movable_ids.iter().map(|id| ctx.dag.index_of(*id).expect("known id")).collect();
    Ok(SearchSpace { evaluator, objective, slo_ms: ctx.slo_ms, movable, retained, base_latency })
}

fn greenest(space: &SearchSpace, ci: &[f64]) -> usize {
    (0..space.retained.len())
        .min_by(|&a, &b| ci[space.retained[a]].total_cmp(&ci[space.retained[b]]).then(a.cmp(&b)))
        .expect("base is retained")
}

fn infeasible(space: &SearchSpace) -> Error {
    Error::Infeasible(format!(
        "no placement meets the {:.1} ms SLO (all-in-base latency {:.1} ms)",
        space.slo_ms, space.base_latency
    ))
}

/// Pruned genetic search. The initial population holds the all-in-base and
/// all-in-greenest placements, so the result is never worse than a feasible
/// all-in-base.
pub fn optimize(ctx: &OptContext) -> Result<OptResult> {
    let started = Instant::now();
    let space = prepare(ctx)?;
    let base_idx = space.retained.iter().position(|&r| r == ctx.base).expect("base retained");
    if space.movable.is_empty() || space.retained.len() == 1 {
        let a = space.evaluator.all_in_base();
        if !space.fitness(&a).is_finite() {
            return Err(infeasible(&space));
        }
        return Ok(space.result(a, 1, 0, StopReason::Trivial, started));
    }
    let m = space.movable.len();
    let seeds = vec![vec![base_idx; m], vec![greenest(&space, &ctx.ci); m]];
    let out = ga::evolve(m, space.retained.len(), &seeds, &ctx.ga, |g| space.fitness(&space.assignment(g)));
    if !out.fitness.is_finite() {
        return Err(infeasible(&space));
    }
    let a = space.assignment(&out.best);
    Ok(space.result(a, out.evaluations, out.generations, out.stop, started))
}

/// Exhaustive search over the same pruned space as [`optimize`].
pub fn brute_force_optimize(ctx: &OptContext) -> Result<OptResult> {
    let started = Instant::now();
    let space = prepare(ctx)?;
    let (genes, fit, evaluations) =
        brute::enumerate(space.movable.len(), space.retained.len(), |g| space.fitness(&space.assignment(g)))?;
    if !fit.is_finite() {
        return Err(infeasible(&space));
    }
    let a = space.assignment(&genes);
    Ok(space.result(a, evaluations, 0, StopReason::Exhaustive, started))
}

/// Whether `a` meets the SLO at the context's traffic.
pub fn feasible(ctx: &OptContext, a: &[usize]) -> Result<bool> {
    Ok(prepare(ctx)?.is_feasible(a))
}
