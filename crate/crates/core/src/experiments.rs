//! Experiment drivers behind the CLI subcommands.

use std::time::Instant;

use chrono::{Duration, TimeZone, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::app::activation_stages;
use crate::error::{Error, Result};
use crate::eval::{e2e_latency, resolve_profiles, ServiceProfile};
use crate::forecast::{evaluate, ForecastEvalRow, GbdtConfig, TrafficTrace, STEP_MINUTES};
use crate::gen::{self, DagGen, ProfileGen, ProfileModel};
use crate::optimizer::{self, GaConfig, OptContext, PinPolicy, Weights};
use crate::seed::derive_seed;
use crate::sim::{simulate, ForecastMode, RunOptions, RunOutput, Scenario};
use crate::strategy::{by_name, DecisionInput, GaStrategy, Strategy};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub strategy: String,
    pub forecaster: String,
    pub seed: u64,
    pub carbon_kg: f64,
    pub cost_usd: f64,
    pub carbon_ratio: f64,
    pub cost_ratio: f64,
    pub mean_latency_ms: f64,
    pub violation_rate: f64,
    pub decisions: usize,
    pub changes_per_day: f64,
    pub adaptation_rate: Option<f64>,
    pub mean_search_space_log10: f64,
}

/// Runs each strategy over the scenario and normalizes carbon and cost by the
/// static run, which is always included and comes first.
pub fn compare(scn: &Scenario, strategies: &[String], seed: u64, forecaster: Option<ForecastMode>) -> Result<(Vec<CompareRow>, Vec<RunOutput>)> {
    let mut names = vec!["static".to_string()];
    names.extend(strategies.iter().filter(|s| *s != "static").cloned());
    let mut boxed = names.iter().map(|n| by_name(n)).collect::<Result<Vec<_>>>()?;
    let opts = RunOptions { forecaster, seed: Some(seed) };
    let outputs = boxed
        .par_iter_mut()
        .map(|s| simulate(scn, s.as_mut(), &opts))
        .collect::<Result<Vec<_>>>()?;
    let base = &outputs[0].summary;
    let ratio = |x: f64, b: f64| if b > 0.0 { x / b } else { 1.0 };
    let rows = outputs
        .iter()
        .map(|o| {
            let s = &o.summary;
            CompareRow {
                strategy: s.strategy.clone(),
                forecaster: s.forecaster.clone(),
                seed,
                carbon_kg: s.carbon_kg,
                cost_usd: s.cost_usd,
                carbon_ratio: ratio(s.carbon_kg, base.carbon_kg),
                cost_ratio: ratio(s.cost_usd, base.cost_usd),
                mean_latency_ms: s.mean_latency_ms,
                violation_rate: s.violation_rate,
                decisions: s.decisions,
                changes_per_day: s.stability.changes_per_day,
                adaptation_rate: s.stability.adaptation_rate,
                mean_search_space_log10: s.mean_search_space_log10,
            }
        })
        .collect();
    Ok((rows, outputs))
}

/// Time-averaged number of services per region, one row per region.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionRow {
    pub strategy: String,
    pub seed: u64,
    pub region: String,
    pub mean_services: f64,
    pub share: f64,
}

pub fn region_distribution(out: &RunOutput, region_ids: &[String], seed: u64) -> Vec<RegionRow> {
    let n = out.ticks.len().max(1) as f64;
    let total: usize = out.ticks.first().map(|t| t.region_counts.iter().sum()).unwrap_or(0);
    region_ids
        .iter()
        .enumerate()
        .map(|(r, id)| {
            let mean = out.ticks.iter().map(|t| t.region_counts[r] as f64).sum::<f64>() / n;
            RegionRow {
                strategy: out.summary.strategy.clone(),
                seed,
                region: id.clone(),
                mean_services: mean,
                share: if total > 0 { mean / total as f64 } else { 0.0 },
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub filter: bool,
    pub pinning: bool,
    pub movable: usize,
    pub retained_regions: usize,
    pub search_space_log10: f64,
    pub evaluations: usize,
    pub objective: Option<f64>,
    #[serde(skip)]
    pub solve_time_s: f64,
}

pub const ABLATION_VARIANTS: [(&str, bool, bool); 4] =
    [("both", true, true), ("filter-only", true, false), ("pinning-only", false, true), ("neither", false, false)];

/// SLO tightness relative to the all-in-base latency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SloLevel {
    Relaxed,
    Medium,
    Strict,
}

impl SloLevel {
    pub const ALL: [SloLevel; 3] = [SloLevel::Relaxed, SloLevel::Medium, SloLevel::Strict];

    /// All-in-base latency as a fraction of the SLO.
    pub fn base_fraction(self) -> f64 {
        match self {
            SloLevel::Relaxed => 0.5,
            SloLevel::Medium => 0.8,
            SloLevel::Strict => 0.9,
        }
    }

    pub fn slo_for(self, base_latency_ms: f64) -> f64 {
        base_latency_ms / self.base_fraction()
    }
}

impl std::str::FromStr for SloLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relaxed" => Ok(SloLevel::Relaxed),
            "medium" => Ok(SloLevel::Medium),
            "strict" => Ok(SloLevel::Strict),
            other => Err(Error::InvalidConfig(format!("unknown slo level '{other}' (expected relaxed, medium or strict)"))),
        }
    }
}

/// The hour-aligned tick with the highest observed load in the horizon, and
/// that load.
pub fn busiest_hour(scn: &Scenario) -> Result<(usize, f64)> {
    let idx0 = scn.traffic.index_of(scn.start)?;
    let per_hour = (60 / STEP_MINUTES) as usize;
    let v = scn.traffic.values();
    let mut best = (0, f64::NEG_INFINITY);
    for k in (0..scn.ticks()).step_by(per_hour) {
        let end = (k + per_hour).min(scn.ticks());
        let peak = v[idx0 + k..idx0 + end].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if peak > best.1 {
            best = (k, peak);
        }
    }
    Ok(best)
}

/// One decision at the busiest hour for every pruning variant. With a level,
/// the SLO is set from the all-in-base latency at that hour instead of taken
/// from the scenario.
pub fn ablate(scn: &Scenario, seed: u64, level: Option<SloLevel>) -> Result<Vec<AblationRow>> {
    let (tick, traffic) = busiest_hour(scn)?;
    let t = scn.start + Duration::minutes(STEP_MINUTES * tick as i64);
    let profiles = resolve_profiles(&scn.dag, &scn.table, traffic)?;
    let slo_ms = match level {
        Some(level) => {
            let latency: Vec<f64> = profiles.iter().map(|p| p.latency_ms).collect();
            level.slo_for(e2e_latency(&scn.dag, &vec![scn.base; scn.dag.len()], &latency, &scn.infra.rtt, scn.base))
        }
        None => scn.spec.slo_ms,
    };
    let ci = scn.infra.ci_vector(t)?;
    let current = vec![scn.base; scn.dag.len()];
    let input = DecisionInput {
        dag: &scn.dag,
        schedule: &scn.schedule,
        infra: &scn.infra,
        base: scn.base,
        allowed: &scn.allowed,
        ci: &ci,
        profiles: &profiles,
        traffic,
        request_payload_gb: scn.spec.request_payload_gb,
        image_gb: scn.spec.image_gb,
        slo_ms,
        weights: scn.spec.weights,
        current: &current,
        seed: derive_seed(seed, "ablate"),
    };
    ABLATION_VARIANTS
        .iter()
        .map(|&(name, filter, pinning)| {
            let mut s = GaStrategy::new(name, filter, pinning);
            s.configure(&scn.spec.strategy_config());
            let d = s.decide(&input)?;
            Ok(AblationRow {
                variant: name.to_string(),
                filter,
                pinning,
                movable: d.movable,
                retained_regions: d.replica_regions.len(),
                search_space_log10: d.search_space_log10,
                evaluations: d.evaluations,
                objective: d.objective,
                solve_time_s: d.solve_time,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionCatalog {
    Eu,
    All,
}

impl std::str::FromStr for RegionCatalog {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eu" => Ok(RegionCatalog::Eu),
            "all" => Ok(RegionCatalog::All),
            other => Err(Error::InvalidConfig(format!("unknown region catalog '{other}' (expected eu or all)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleRow {
    pub services: usize,
    pub catalog: RegionCatalog,
    pub slo_level: SloLevel,
    pub seed: u64,
    pub regions: usize,
    pub retained_regions: usize,
    pub search_space_log10: f64,
    pub generations: usize,
    pub evaluations: usize,
    pub objective: f64,
    #[serde(skip)]
    pub solve_time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleConfig {
    pub catalog: RegionCatalog,
    pub traffic: f64,
    pub slo_level: SloLevel,
    pub ga: GaConfig,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        ScaleConfig {
            catalog: RegionCatalog::Eu,
            traffic: 300.0,
            slo_level: SloLevel::Relaxed,
            ga: GaConfig { max_generations: 100_000, patience: 50, time_budget_s: 600.0, parallel: true, ..GaConfig::default() },
        }
    }
}

/// Solves one generated instance with `services` movable services.
pub fn scale_point(services: usize, cfg: &ScaleConfig, seed: u64) -> Result<ScaleRow> {
    let specs = match cfg.catalog {
        RegionCatalog::Eu => gen::eu_regions(),
        RegionCatalog::All => gen::eu_regions().into_iter().chain(gen::na_regions()).collect(),
    };
    let start = Utc.with_ymd_and_hms(2023, 8, 8, 12, 0, 0).unwrap();
    let infra = gen::build_infra(&specs, start, 24, derive_seed(seed, "scale/infra"))?;
    let layers = 8.min(services);
    let dag = gen::random_layered_dag(&DagGen { compute: services, layers, ..DagGen::default() }, derive_seed(seed, &format!("scale/dag/{services}")))?;
    let model = ProfileModel::random_for(&dag, &ProfileGen::default(), derive_seed(seed, &format!("scale/profiles/{services}")));
    let profiles: Vec<ServiceProfile> = dag
        .services()
        .iter()
        .map(|s| {
            let m = model.services[&s.profile_key].metrics(cfg.traffic);
            ServiceProfile { energy_j: m.energy_j, latency_ms: m.latency_ms, cpu_cores: m.cpu_cores, mem_gb: m.mem_gb }
        })
        .collect();
    let base = infra.index_of("frankfurt")?;
    let latency: Vec<f64> = profiles.iter().map(|p| p.latency_ms).collect();
    let base_latency = e2e_latency(&dag, &vec![base; dag.len()], &latency, &infra.rtt, base);
    let schedule = activation_stages(&dag);
    let ctx = OptContext {
        dag: &dag,
        schedule: &schedule,
        infra: &infra,
        base,
        allowed: (0..infra.len()).collect(),
        ci: infra.ci_vector(start)?,
        profiles,
        traffic: cfg.traffic,
        request_payload_gb: 5e-7,
        image_gb: 5.0,
        slo_ms: cfg.slo_level.slo_for(base_latency),
        weights: Weights::default(),
        pin: PinPolicy::default(),
        filter_regions: true,
        ga: GaConfig { seed: derive_seed(seed, &format!("scale/ga/{services}")), ..cfg.ga },
    };
    let started = Instant::now();
    let r = optimizer::optimize(&ctx)?;
    Ok(ScaleRow {
        services,
        catalog: cfg.catalog,
        slo_level: cfg.slo_level,
        seed,
        regions: infra.len(),
        retained_regions: r.retained.len(),
        search_space_log10: r.search_space_log10,
        generations: r.generations,
        evaluations: r.evaluations,
        objective: r.objective,
        solve_time_s: started.elapsed().as_secs_f64(),
    })
}

/// Least-squares slope of log(y) against log(x).
pub fn power_law_exponent(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

/// Every (size, level, seed) cell, in that nesting order. Seeds run
/// `seed, seed + 1, ..`.
pub fn scale(sizes: &[usize], levels: &[SloLevel], seeds: usize, cfg: &ScaleConfig, seed: u64) -> Result<Vec<ScaleRow>> {
    let mut rows = Vec::new();
    for &m in sizes {
        for &level in levels {
            for k in 0..seeds as u64 {
                rows.push(scale_point(m, &ScaleConfig { slo_level: level, ..*cfg }, seed + k)?);
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleMedian {
    pub services: usize,
    pub slo_level: SloLevel,
    pub seeds: usize,
    pub median_solve_time_s: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Median solve time per (size, level), in first-seen order.
pub fn scale_medians(rows: &[ScaleRow]) -> Vec<ScaleMedian> {
    let mut keys: Vec<(usize, SloLevel)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.services, r.slo_level)) {
            keys.push((r.services, r.slo_level));
        }
    }
    keys.into_iter()
        .map(|(services, slo_level)| {
            let times: Vec<f64> = rows.iter().filter(|r| r.services == services && r.slo_level == slo_level).map(|r| r.solve_time_s).collect();
            ScaleMedian { services, slo_level, seeds: times.len(), median_solve_time_s: median(times) }
        })
        .collect()
}

/// Held-out forecaster comparison on `trace`.
pub fn forecast_eval(trace: &TrafficTrace, train_frac: f64, cfg: &GbdtConfig) -> Result<Vec<ForecastEvalRow>> {
    evaluate(trace, train_frac, cfg)
}
