//! The 5-minute tick loop.
//!
//! At every full hour the forecaster estimates the coming hour's peak load
//! and carbon intensities are compared with their 6-hour trend. Any trigger
//! asks the strategy for a new placement, which goes live after the
//! migration delay. Every tick is billed at the observed load.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Duration, Utc};

use crate::error::{Error, Result};
use crate::eval::{resolve_profiles, violation_rate, Assignment, Evaluator, RateInputs};
use crate::forecast::{hour_estimate, lag_mean, naive_persistence, GbdtModel, LAGS, STEP_MINUTES};
use crate::optimizer::triggers::{carbon_trigger, trend, workload_trigger, CARBON_THRESHOLD, TREND_HOURS};
use crate::seed::{derive_seed, mix};
use crate::sim::metrics::{
    summarize, write_events, write_metrics_csv, write_summary, write_timing, Event, EventKind, Summary, TickRecord, TimingRecord,
};
use crate::sim::scenario::{ForecastMode, Scenario};
use crate::strategy::{Decision, DecisionInput, Strategy};
use crate::timefmt::fmt_ts;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunOptions {
    pub forecaster: Option<ForecastMode>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: Summary,
    pub ticks: Vec<TickRecord>,
    pub events: Vec<Event>,
    pub timing: Vec<TimingRecord>,
}

impl RunOutput {
    pub fn write(&self, dir: &Path, region_ids: &[String]) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_metrics_csv(&dir.join("metrics.csv"), region_ids, &self.ticks)?;
        write_events(&dir.join("events.jsonl"), &self.events)?;
        write_summary(&dir.join("summary.json"), &self.summary)?;
        write_timing(&dir.join("timing.json"), &self.timing)
    }
}

enum Forecaster {
    Gbdt { model: GbdtModel, trained_at: DateTime<Utc> },
    Persistence,
    LagMean,
    Reactive,
}

impl Forecaster {
    fn new(scn: &Scenario, mode: ForecastMode) -> Result<Self> {
        Ok(match mode {
            ForecastMode::Gbdt => Forecaster::Gbdt { model: train(scn, scn.start)?, trained_at: scn.start },
            ForecastMode::Persistence => Forecaster::Persistence,
            ForecastMode::LagMean => Forecaster::LagMean,
            ForecastMode::Reactive => Forecaster::Reactive,
        })
    }

    /// Peak load expected over the hour starting at traffic index `idx`.
    fn estimate(&mut self, scn: &Scenario, idx: usize) -> Result<f64> {
        let t = scn.traffic.time_at(idx);
        let history = &scn.traffic.values()[idx - LAGS..idx];
        let window = match self {
            Forecaster::Gbdt { model, trained_at } => {
                if t - *trained_at >= Duration::days(scn.spec.forecaster.retrain_days) {
                    *model = train(scn, t)?;
                    *trained_at = t;
                }
                model.predict_window(history, t - Duration::minutes(STEP_MINUTES))?
            }
            Forecaster::Persistence => naive_persistence(history)?,
            Forecaster::LagMean => lag_mean(history)?,
            Forecaster::Reactive => return Ok(scn.traffic.values()[idx]),
        };
        Ok(hour_estimate(&window))
    }
}

fn train(scn: &Scenario, until: DateTime<Utc>) -> Result<GbdtModel> {
    let idx = scn.traffic.index_of(until)?;
    GbdtModel::train(&scn.traffic.slice(0, idx), &scn.spec.forecaster.gbdt)
}

/// Regions whose intensity at `t` departs from the trailing trend.
fn carbon_shift(scn: &Scenario, t: DateTime<Utc>) -> Result<bool> {
    let first = scn.infra.carbon_coverage().0;
    for &r in &scn.allowed {
        let trace = &scn.infra.carbon[r];
        let past: Vec<f64> = (1..=TREND_HOURS as i64)
            .map(|h| t - Duration::hours(h))
            .filter(|&p| p >= first)
            .map(|p| trace.ci_at(p))
            .collect::<Result<_>>()?;
        if past.is_empty() {
            continue;
        }
        if carbon_trigger(trend(&past), trace.ci_at(t)?, CARBON_THRESHOLD) {
            return Ok(true);
        }
    }
    Ok(false)
}

fn region_counts(a: &[usize], regions: usize) -> Vec<usize> {
    let mut c = vec![0; regions];
    for &r in a {
        c[r] += 1;
    }
    c
}

struct Pending {
    apply_tick: usize,
    assignment: Assignment,
    replicas: Vec<usize>,
}

/// Runs `strategy` over the scenario horizon.
pub fn simulate(scn: &Scenario, strategy: &mut dyn Strategy, opts: &RunOptions) -> Result<RunOutput> {
    let spec = &scn.spec;
    let seed = opts.seed.unwrap_or(spec.seed);
    let mode = opts.forecaster.unwrap_or(spec.forecaster.mode);
    strategy.configure(&spec.strategy_config());
    let decide_seed = derive_seed(seed, "decide");
    let jitter_seed = derive_seed(seed, "jitter");
    let regions = scn.infra.len();
    let idx0 = scn.traffic.index_of(scn.start)?;
    let delay = spec.migration_delay_ticks;

    let mut forecaster = Forecaster::new(scn, mode)?;
    let mut live: Assignment = vec![scn.base; scn.dag.len()];
    let mut live_replicas = vec![scn.base];
    let mut pending: Option<Pending> = None;
    let mut current_bucket = 0;
    let mut n_decisions = 0u64;
    let mut ticks = Vec::with_capacity(scn.ticks());
    let mut events = Vec::new();
    let mut timing = Vec::new();

    for k in 0..scn.ticks() {
        let at = |e: Error| Error::AtTick { tick: k, source: Box::new(e) };
        let t = scn.start + Duration::minutes(STEP_MINUTES * k as i64);
        let idx = idx0 + k;
        let observed = scn.traffic.values()[idx];

        if let Some(p) = pending.take_if(|p| p.apply_tick == k) {
            live = p.assignment;
            live_replicas = p.replicas;
            events.push(Event { placement: Some(placement_counts(scn, &live)), ..Event::new(k, fmt_ts(t), EventKind::Applied) });
        }

        let mut triggers = Vec::new();
        let mut estimate = observed;
        if k == 0 {
            estimate = forecaster.estimate(scn, idx).map_err(at)?;
        } else {
            let hourly = k % (60 / STEP_MINUTES as usize) == 0;
            if hourly && carbon_shift(scn, t).map_err(at)? {
                triggers.push("carbon".to_string());
            }
            if mode == ForecastMode::Reactive {
                if workload_trigger(current_bucket, scn.table.bucket_index(observed)) {
                    triggers.push("workload".to_string());
                }
            } else if hourly {
                estimate = forecaster.estimate(scn, idx).map_err(at)?;
                if workload_trigger(current_bucket, scn.table.bucket_index(estimate)) {
                    triggers.push("workload".to_string());
                }
            }
        }

        if k == 0 || !triggers.is_empty() {
            let profiles = resolve_profiles(&scn.dag, &scn.table, estimate).map_err(at)?;
            let ci = scn.infra.ci_vector(t).map_err(at)?;
            let input = DecisionInput {
                dag: &scn.dag,
                schedule: &scn.schedule,
                infra: &scn.infra,
                base: scn.base,
                allowed: &scn.allowed,
                ci: &ci,
                profiles: &profiles,
                traffic: estimate,
                request_payload_gb: spec.request_payload_gb,
                image_gb: spec.image_gb,
                slo_ms: spec.slo_ms,
                weights: spec.weights,
                current: &live,
                seed: mix(decide_seed, n_decisions, 0),
            };
            n_decisions += 1;
            current_bucket = scn.table.bucket_index(estimate);
            let kind = if k == 0 { EventKind::Initial } else { EventKind::Decision };
            let mut ev = Event {
                triggers,
                traffic_estimate: Some(estimate),
                bucket: Some(current_bucket),
                ..Event::new(k, fmt_ts(t), kind)
            };
            let decision = match strategy.decide(&input) {
                Ok(d) => d,
                Err(e) if k > 0 && e.is_infeasible() => {
                    log::warn!("tick {k}: {e}; falling back to the base region");
                    events.push(Event { message: Some(e.to_string()), ..Event::new(k, fmt_ts(t), EventKind::Fallback) });
                    ev.message = Some("fallback to base".into());
                    Decision {
                        assignment: vec![scn.base; scn.dag.len()],
                        replica_regions: vec![scn.base],
                        objective: None,
                        evaluations: 0,
                        search_space_log10: 0.0,
                        movable: 0,
                        solve_time: 0.0,
                    }
                }
                Err(e) => return Err(at(e)),
            };
            timing.push(TimingRecord { tick: k, solve_time_s: decision.solve_time });
            ev.objective = decision.objective;
            ev.evaluations = decision.evaluations;
            ev.search_space_log10 = decision.search_space_log10;
            ev.movable = decision.movable;
            ev.placement = Some(placement_counts(scn, &decision.assignment));
            ev.moved = live.iter().zip(&decision.assignment).filter(|(a, b)| a != b).count();
            ev.changed = ev.moved > 0;
            if k == 0 || (ev.changed && delay == 0) {
                live = decision.assignment;
                live_replicas = decision.replica_regions;
                pending = None;
                ev.apply_tick = Some(k);
            } else if ev.changed {
                let apply_tick = match &pending {
                    Some(p) if p.assignment == decision.assignment => p.apply_tick,
                    _ => k + delay,
                };
                ev.apply_tick = Some(apply_tick);
                pending = Some(Pending { apply_tick, assignment: decision.assignment, replicas: decision.replica_regions });
            } else {
                pending = None;
                live_replicas = decision.replica_regions;
            }
            events.push(ev);
        }

        let profiles = resolve_profiles(&scn.dag, &scn.table, observed).map_err(at)?;
        let ci = scn.infra.ci_vector(t).map_err(at)?;
        let mut replicas = live_replicas.clone();
        if let Some(p) = &pending {
            replicas.extend(&p.replicas);
        }
        replicas.sort_unstable();
        replicas.dedup();
        let inputs = RateInputs {
            traffic: observed,
            request_payload_gb: spec.request_payload_gb,
            image_gb: spec.image_gb,
            replica_regions: replicas.len(),
        };
        let ev = Evaluator::new(&scn.dag, &scn.infra, scn.base, &profiles, &ci, inputs).map_err(at)?;
        let rates = ev.rates(&live);
        let migration_cost: f64 = pending.as_ref().map_or(0.0, |p| {
            (0..live.len())
                .filter(|&s| p.assignment[s] != live[s])
                .map(|s| ev.instance_price(s, p.assignment[s]))
                .filter(|c| c.is_finite())
                .sum()
        });
        let (violations, mean_latency) = violation_rate(rates.latency, spec.slo_ms, spec.jitter_sigma, spec.n_draws, mix(jitter_seed, k as u64, 0));
        let per_tick = f64::from(60 / STEP_MINUTES as u32);
        ticks.push(TickRecord {
            tick: k,
            time: fmt_ts(t),
            traffic: observed,
            bucket: scn.table.bucket_index(observed),
            carbon_g: rates.carbon / per_tick,
            cost_usd: (rates.cost + migration_cost) / per_tick,
            latency_ms: rates.latency,
            mean_latency_ms: mean_latency,
            violation_rate: violations,
            migrating: pending.is_some(),
            region_counts: region_counts(&live, regions),
        });
    }

    let summary = summarize(
        &spec.name,
        strategy.name(),
        forecaster_name(mode),
        seed,
        &ticks,
        &events,
        scn.dag.unpinned_ids().len(),
    );
    Ok(RunOutput { summary, ticks, events, timing })
}

pub fn forecaster_name(mode: ForecastMode) -> &'static str {
    match mode {
        ForecastMode::Gbdt => "gbdt",
        ForecastMode::Persistence => "persistence",
        ForecastMode::LagMean => "lag-mean",
        ForecastMode::Reactive => "reactive",
    }
}

fn placement_counts(scn: &Scenario, a: &[usize]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for &r in a {
        *m.entry(scn.infra.regions.get(r).id.clone()).or_insert(0) += 1;
    }
    m
}
