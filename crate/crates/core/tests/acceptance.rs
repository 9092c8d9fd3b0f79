//! Acceptance checks. Each test prints one `ACn PASS|FAIL` line with the
//! measured figures, then asserts. Tests take a shared lock so wall-clock
//! bounds are not skewed by each other.

mod common;

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Instant;

use chrono::{TimeZone, Utc};
use geoplace_core::eval::RateInputs;
use geoplace_core::experiments::{self, RegionCatalog, ScaleConfig, SloLevel};
use geoplace_core::fixtures::DEATHSTAR_STATIC_PLACEMENTS;
use geoplace_core::forecast::{self, GbdtConfig};
use geoplace_core::gen::{self, TrafficGen};
use geoplace_core::optimizer::region_filter;
use geoplace_core::profiler::{equal_frequency_starts, initial_bucket_count};
use geoplace_core::strategy::{GaStrategy, StrategyConfig};
use geoplace_core::{
    activation_stages, brute_force_optimize, e2e_latency, optimize, simulate, BucketConfig, BucketTable, Decision, DecisionInput,
    Evaluator, ForecastMode, GaConfig, OptContext, PinPolicy, ProfileMetrics, ProfileSample, RunOptions, Scenario, Strategy, Weights,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(id: &str, ok: bool, detail: String) {
    println!("{id} {} {detail}", if ok { "PASS" } else { "FAIL" });
}

/// Minimum of the base-relative objective over the retained regions,
/// enumerated directly from the evaluator.
fn enumerate_optimum(ctx: &OptContext, retained: &[usize]) -> Option<f64> {
    let inputs = RateInputs {
        traffic: ctx.traffic,
        request_payload_gb: ctx.request_payload_gb,
        image_gb: ctx.image_gb,
        replica_regions: retained.len(),
    };
    let ev = Evaluator::new(ctx.dag, ctx.infra, ctx.base, &ctx.profiles, &ctx.ci, inputs).unwrap();
    let base = ev.all_in_base();
    let (c0, k0) = (ev.carbon(&base), ev.cost(&base));
    let movable: Vec<usize> = ctx.dag.unpinned_ids().iter().map(|id| ctx.dag.index_of(*id).unwrap()).collect();
    let mut best: Option<f64> = None;
    for_each_assignment(movable.len(), retained.len(), |genes| {
        let mut a = base.clone();
        for (&m, &g) in movable.iter().zip(genes) {
            a[m] = retained[g];
        }
        if ev.latency(&a) > ctx.slo_ms {
            return;
        }
        let obj = ctx.weights.w_carbon * ev.carbon(&a) / c0 + ctx.weights.w_cost * ev.cost(&a) / k0;
        if best.map_or(true, |b| obj < b) {
            best = Some(obj);
        }
    });
    best
}

#[test]
fn ac1_optimizer_matches_brute_force() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut within, mut slowest, mut oracle_mismatch) = (0, 0.0_f64, 0);
    let runs = 100;
    for i in 0..runs {
        let compute = rng.random_range(1..=8);
        let r = rng.random_range(2..=3);
        let with_store = rng.random_bool(0.5);
        let dag = random_dag(&mut rng, compute, with_store);
        let ci: Vec<f64> = (0..r).map(|_| rng.random_range(20.0..500.0_f64).round()).collect();
        let infra = random_infra(&mut rng, r, &ci);
        let profiles = random_profiles(&mut rng, &dag);
        let latency: Vec<f64> = profiles.iter().map(|p| p.latency_ms).collect();
        let base_latency = e2e_latency(&dag, &vec![0; dag.len()], &latency, &infra.rtt, 0);
        let w_carbon = rng.random_range(0.1..0.9);
        let schedule = activation_stages(&dag);
        let ctx = OptContext {
            dag: &dag,
            schedule: &schedule,
            infra: &infra,
            base: 0,
            allowed: (0..r).collect(),
            ci: ci.clone(),
            profiles,
            traffic: 200.0,
            request_payload_gb: 1e-6,
            image_gb: 5.0,
            slo_ms: base_latency * rng.random_range(1.2..3.0),
            weights: Weights { w_carbon, w_cost: 1.0 - w_carbon },
            pin: PinPolicy { enabled: false, ..PinPolicy::default() },
            filter_regions: true,
            ga: GaConfig { seed: i, ..GaConfig::default() },
        };
        let started = Instant::now();
        let ga = optimize(&ctx).unwrap();
        slowest = slowest.max(started.elapsed().as_secs_f64());
        let exact = brute_force_optimize(&ctx).unwrap();
        if ga.objective <= exact.objective * 1.01 + 1e-12 {
            within += 1;
        }
        let retained = filter_by_dominance(0, &ctx.allowed, &ci, &infra.pricing.reference_prices(), true);
        let oracle = enumerate_optimum(&ctx, &retained).unwrap();
        if (oracle - exact.objective).abs() > 1e-9 * oracle.abs().max(1.0) {
            oracle_mismatch += 1;
        }
    }
    let ok = within >= 95 && slowest < 5.0 && oracle_mismatch == 0;
    report(
        "AC1",
        ok,
        format!("within 1% of brute force in {within}/{runs} runs, slowest {slowest:.3} s, brute-force/oracle mismatches {oracle_mismatch}"),
    );
    assert!(ok);
}

/// Passes decisions through and keeps the first one.
struct Recording {
    inner: GaStrategy,
    first: Option<Decision>,
}

impl Strategy for Recording {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn configure(&mut self, cfg: &StrategyConfig) {
        self.inner.configure(cfg)
    }

    fn decide(&mut self, input: &DecisionInput) -> geoplace_core::Result<Decision> {
        let d = self.inner.decide(input)?;
        self.first.get_or_insert_with(|| d.clone());
        Ok(d)
    }
}

#[test]
fn ac2_deathstar_subtree_offload() {
    let _g = serial();
    let started = Instant::now();
    let scn = Scenario::load(&fixture("deathstar/scenario.json"), None).unwrap();
    let mut base = geoplace_core::by_name("static").unwrap();
    let static_run = simulate(&scn, base.as_mut(), &RunOptions::default()).unwrap();
    let mut rec = Recording { inner: GaStrategy::aceso(), first: None };
    let run = simulate(&scn, &mut rec, &RunOptions::default()).unwrap();
    let elapsed = started.elapsed().as_secs_f64();

    let stockholm = scn.infra.index_of("stockholm").unwrap();
    let expected: Vec<u32> = DEATHSTAR_STATIC_PLACEMENTS.iter().find(|(n, _)| *n == "M2-M7").unwrap().1.to_vec();
    let a = rec.first.expect("initial decision").assignment;
    let moved: Vec<u32> =
        scn.dag.services().iter().enumerate().filter(|(i, _)| a[*i] == stockholm).map(|(_, s)| s.id).collect();

    let carbon = run.summary.carbon_kg / static_run.summary.carbon_kg;
    let cost = run.summary.cost_usd / static_run.summary.cost_usd;
    let latency = run.summary.mean_latency_ms;
    let ok = moved == expected
        && (carbon - 0.79).abs() <= 0.03
        && (cost - 0.982).abs() <= 0.005
        && (latency - 111.0).abs() <= 10.0
        && elapsed < 30.0;
    report(
        "AC2",
        ok,
        format!("moved {moved:?}, carbon ratio {carbon:.4}, cost ratio {cost:.4}, latency {latency:.2} ms, {elapsed:.2} s"),
    );
    assert!(ok);
}

#[test]
fn ac3_pruning_ablation() {
    let _g = serial();
    let started = Instant::now();
    let scn = Scenario::load(&fixture("eu/scenario.json"), None).unwrap();
    let rows = experiments::ablate(&scn, scn.spec.seed, Some(SloLevel::Strict)).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    let size: BTreeMap<&str, f64> = rows.iter().map(|r| (r.variant.as_str(), r.search_space_log10)).collect();
    let (both, neither) = (size["both"], size["neither"]);
    let between = |v: f64| both < v && v < neither;
    let ok = both <= neither - 0.8 && between(size["filter-only"]) && between(size["pinning-only"]) && elapsed < 120.0;
    report(
        "AC3",
        ok,
        format!(
            "log10 sizes: both {both:.2}, filter-only {:.2}, pinning-only {:.2}, neither {neither:.2}; {elapsed:.1} s",
            size["filter-only"], size["pinning-only"]
        ),
    );
    assert!(ok);
}

const EU_SEEDS: std::ops::RangeInclusive<u64> = 1..=10;

#[test]
fn ac4_ac5_four_day_eu_run() {
    let _g = serial();
    let started = Instant::now();
    let scn = Scenario::load(&fixture("eu/scenario.json"), None).unwrap();
    let strategies = ["static".to_string(), "aceso".to_string(), "vanilla-ga".to_string()];
    let (mut carbon, mut cost, mut violations, mut adaptation, mut per_day, mut reactive_per_day) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut aceso_wins = 0;
    for seed in EU_SEEDS {
        let (rows, _) = experiments::compare(&scn, &strategies, seed, None).unwrap();
        let row = |name: &str| rows.iter().find(|r| r.strategy == name).unwrap().clone();
        let (aceso, vanilla) = (row("aceso"), row("vanilla-ga"));
        carbon.push(aceso.carbon_ratio);
        cost.push(aceso.cost_ratio);
        violations.push(aceso.violation_rate);
        adaptation.push(aceso.adaptation_rate.unwrap_or(0.0));
        per_day.push(aceso.changes_per_day);
        if aceso.carbon_kg < vanilla.carbon_kg {
            aceso_wins += 1;
        }
        let mut s = GaStrategy::aceso();
        let reactive = simulate(&scn, &mut s, &RunOptions { forecaster: Some(ForecastMode::Reactive), seed: Some(seed) }).unwrap();
        reactive_per_day.push(reactive.summary.stability.changes_per_day);
    }
    let elapsed = started.elapsed().as_secs_f64();

    let ac4 = mean(&carbon) <= 0.65 && mean(&cost) <= 1.0 && mean(&violations) <= 0.01 && aceso_wins >= 8 && elapsed < 600.0;
    report(
        "AC4",
        ac4,
        format!(
            "carbon ratio {:.3}, cost ratio {:.4}, violations {:.3}%, aceso below vanilla in {aceso_wins}/10 seeds, {elapsed:.1} s",
            mean(&carbon),
            mean(&cost),
            100.0 * mean(&violations)
        ),
    );
    let min_adaptation = adaptation.iter().copied().fold(f64::INFINITY, f64::min);
    let speedup = mean(&reactive_per_day) / mean(&per_day);
    let ac5 = min_adaptation == 1.0 && (4.0..=10.0).contains(&mean(&per_day)) && speedup >= 2.5;
    report(
        "AC5",
        ac5,
        format!(
            "adaptation min {:.3}, changes/day {:.2}, reactive {:.2}/day ({speedup:.2}x)",
            min_adaptation,
            mean(&per_day),
            mean(&reactive_per_day)
        ),
    );
    assert!(ac4 && ac5);
}

#[test]
fn ac6_scalability() {
    let _g = serial();
    let eu = ScaleConfig::default();
    let rows = experiments::scale(&[100, 200, 400, 800], &[SloLevel::Relaxed], 3, &eu, 0).unwrap();
    let medians = experiments::scale_medians(&rows);
    let points: Vec<(f64, f64)> = medians.iter().map(|m| (m.services as f64, m.median_solve_time_s)).collect();
    let exponent = experiments::power_law_exponent(&points).unwrap();
    let at_100 = rows.iter().filter(|r| r.services == 100).map(|r| r.solve_time_s).fold(0.0, f64::max);
    let all = ScaleConfig { catalog: RegionCatalog::All, ..ScaleConfig::default() };
    let big = experiments::scale_point(1000, &all, 0).unwrap();
    let ok = at_100 < 60.0 && big.solve_time_s < 300.0 && (1.5..=2.5).contains(&exponent);
    let medians_s: Vec<String> = points.iter().map(|(m, t)| format!("{m}:{t:.3}")).collect();
    report(
        "AC6",
        ok,
        format!(
            "100 services {at_100:.2} s, 1000 services x {} regions {:.1} s, exponent {exponent:.2} (medians {})",
            big.regions,
            big.solve_time_s,
            medians_s.join(" ")
        ),
    );
    assert!(ok);
}

#[test]
fn ac7_forecaster_ranking() {
    let _g = serial();
    let start = Utc.with_ymd_and_hms(2023, 8, 1, 0, 0, 0).unwrap();
    let (trace, _) = gen::generate_traffic(&TrafficGen::default(), start, 14 * 288, 11).unwrap();
    let rows = forecast::evaluate(&trace, 0.7, &GbdtConfig::default()).unwrap();
    let row = |m: &str| rows.iter().find(|r| r.model == m).unwrap();
    let (g, p, l) = (row("gbdt"), row("persistence"), row("lag-mean"));
    let ok = g.mae < p.mae && g.mae < l.mae && g.mean_inference_ms < 1.0;
    report(
        "AC7",
        ok,
        format!(
            "MAE gbdt {:.2}, persistence {:.2}, lag-mean {:.2}; inference {:.4} ms over {} windows",
            g.mae, p.mae, l.mae, g.mean_inference_ms, g.windows
        ),
    );
    assert!(ok);
}

fn metrics_bytes(scn: &Scenario, dir: &std::path::Path) -> Vec<u8> {
    let mut s = GaStrategy::aceso();
    let out = simulate(scn, &mut s, &RunOptions { forecaster: None, seed: Some(3) }).unwrap();
    out.write(dir, &scn.infra.regions.ids()).unwrap();
    std::fs::read(dir.join("metrics.csv")).unwrap()
}

fn latency_oracle_mismatches(rng: &mut ChaCha8Rng) -> usize {
    let mut bad = 0;
    for _ in 0..500 {
        let compute = rng.random_range(0..=10);
        let with_store = compute > 0 && rng.random_bool(0.5);
        let dag = random_dag(rng, compute, with_store);
        let r = 3;
        let infra = random_infra(rng, r, &[100.0, 200.0, 300.0]);
        let lat: Vec<f64> = (0..dag.len()).map(|_| rng.random_range(0.5..30.0)).collect();
        let assign: Vec<usize> = (0..dag.len()).map(|_| rng.random_range(0..r)).collect();
        let base = rng.random_range(0..r);
        let fast = e2e_latency(&dag, &assign, &lat, &infra.rtt, base);
        let slow = latency_by_paths(&dag, &assign, &lat, &infra.rtt, base);
        if (fast - slow).abs() > 1e-9 * slow.max(1.0) {
            bad += 1;
        }
    }
    bad
}

fn filter_oracle_mismatches(rng: &mut ChaCha8Rng) -> usize {
    let mut bad = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=8);
        // Coarse grids make ties with the base common.
        let ci: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(1..=6)) * 50.0).collect();
        let price: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(1..=4)) * 0.01).collect();
        let base = rng.random_range(0..n);
        let candidates: Vec<usize> = (0..n).collect();
        for conservative in [false, true] {
            let got = region_filter(base, &candidates, &ci, &price, conservative).unwrap();
            if got != filter_by_dominance(base, &candidates, &ci, &price, conservative) {
                bad += 1;
            }
        }
    }
    bad
}

fn sample_set(rng: &mut ChaCha8Rng) -> Vec<ProfileSample> {
    let n = rng.random_range(1..=1200);
    let ties = rng.random_bool(0.3);
    (0..n)
        .map(|i| {
            let mut traffic = rng.random_range(0.0..1000.0_f64);
            if ties {
                traffic = (traffic / 50.0).round() * 50.0;
            }
            let per_ms = ["a", "b"]
                .into_iter()
                .map(|k| {
                    let m = ProfileMetrics {
                        energy_j: rng.random_range(0.0..500.0),
                        latency_ms: rng.random_range(0.0..40.0),
                        cpu_cores: rng.random_range(0.0..4.0),
                        mem_gb: rng.random_range(0.0..8.0),
                        net_mbps: rng.random_range(0.0..50.0),
                    };
                    (k.to_string(), m)
                })
                .collect();
            ProfileSample { timestamp: t0() + chrono::Duration::minutes(5 * i as i64), traffic, per_ms }
        })
        .collect()
}

fn fields(m: &ProfileMetrics) -> [f64; 5] {
    [m.energy_j, m.latency_ms, m.cpu_cores, m.mem_gb, m.net_mbps]
}

/// Violations of the bucket table invariants for one sample set.
fn table_violations(samples: &[ProfileSample]) -> Vec<String> {
    let cfg = BucketConfig::default();
    let table = BucketTable::build(samples.to_vec(), cfg).unwrap();
    let b = table.buckets();
    let n = samples.len();
    let mut errs = Vec::new();
    if b.len() > cfg.k_max || b.is_empty() {
        errs.push(format!("{} buckets", b.len()));
    }
    if b.iter().map(|x| x.count).sum::<usize>() != n {
        errs.push("counts do not sum to the sample count".into());
    }
    if b.len() > 1 && b.iter().any(|x| x.count < cfg.n_min) {
        errs.push("undersized bucket".into());
    }
    for w in b.windows(2) {
        if w[0].hi != w[1].lo || w[0].lo >= w[0].hi {
            errs.push("ranges not contiguous".into());
        }
    }
    let lo = samples.iter().map(|s| s.traffic).fold(f64::INFINITY, f64::min);
    let hi = samples.iter().map(|s| s.traffic).fold(f64::NEG_INFINITY, f64::max);
    if b[0].lo != lo || b[b.len() - 1].hi != hi {
        errs.push("ranges do not span the samples".into());
    }
    for (k, bucket) in b.iter().enumerate() {
        let last = k + 1 == b.len();
        let members: Vec<&ProfileSample> = samples
            .iter()
            .filter(|s| s.traffic >= bucket.lo && (s.traffic < bucket.hi || (last && s.traffic <= bucket.hi)))
            .collect();
        if members.len() != bucket.count {
            errs.push(format!("bucket {k} holds {} samples, reports {}", members.len(), bucket.count));
            continue;
        }
        for (key, rep) in &bucket.per_ms {
            for (f, &r) in fields(rep).iter().enumerate() {
                let xs: Vec<f64> = members.iter().map(|s| fields(&s.per_ms[key])[f]).collect();
                let mu = mean(&xs);
                let sd = (xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
                if r < mu - 1e-9 || (r - (mu + sd)).abs() > 1e-9 * (mu + sd).max(1.0) {
                    errs.push(format!("bucket {k} {key} field {f}: {r} vs mean {mu} sd {sd}"));
                }
            }
        }
    }
    for probe in [-1.0, 0.0, lo, hi, hi + 1.0, 1e9] {
        if table.bucket_index(probe) >= b.len() {
            errs.push(format!("lookup of {probe} out of range"));
        }
    }
    let mut sorted: Vec<f64> = samples.iter().map(|s| s.traffic).collect();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    if sorted.len() == n {
        let k = initial_bucket_count(n, &cfg);
        let starts = equal_frequency_starts(&sorted, k);
        let counts: Vec<usize> = starts.iter().enumerate().map(|(i, &s)| starts.get(i + 1).copied().unwrap_or(n) - s).collect();
        let (mn, mx) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        if mx - mn > 1 || counts.len() != k {
            errs.push(format!("equal-frequency split {counts:?}"));
        }
    }
    errs
}

#[test]
fn ac8_determinism_and_oracles() {
    let _g = serial();
    let scn = Scenario::load(&fixture("eu/scenario.json"), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let identical = metrics_bytes(&scn, &dir.path().join("a")) == metrics_bytes(&scn, &dir.path().join("b"));

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let latency_bad = latency_oracle_mismatches(&mut rng);
    let filter_bad = filter_oracle_mismatches(&mut rng);
    let mut profiler_bad = 0;
    let mut first_error = None;
    for _ in 0..1000 {
        let errs = table_violations(&sample_set(&mut rng));
        if !errs.is_empty() {
            profiler_bad += 1;
            first_error.get_or_insert(errs[0].clone());
        }
    }
    let ok = identical && latency_bad == 0 && filter_bad == 0 && profiler_bad == 0;
    report(
        "AC8",
        ok,
        format!(
            "metrics.csv identical: {identical}; latency mismatches {latency_bad}/500; filter mismatches {filter_bad}/2000; \
             profiler violations {profiler_bad}/1000{}",
            first_error.map(|e| format!(" ({e})")).unwrap_or_default()
        ),
    );
    assert!(ok);
}
