//! Replays the hand-picked social-network placements through the simulator
//! and checks their carbon, cost and latency orderings against first-principles
//! figures computed here.

mod common;

use std::collections::BTreeMap;

use geoplace_core::fixtures::{DEATHSTAR_PAYLOAD_GB, DEATHSTAR_RPS, DEATHSTAR_STATIC_PLACEMENTS};
use geoplace_core::infra::HOURS_PER_MONTH;
use geoplace_core::strategy::FixedStrategy;
use geoplace_core::{simulate, RunOptions, Scenario, Summary};

use common::*;

struct Replay {
    label: &'static str,
    moved: &'static [u32],
    summary: Summary,
    carbon_oracle: f64,
    cost_oracle: f64,
}

fn replays() -> Vec<Replay> {
    let scn = Scenario::load(&fixture("deathstar/scenario.json"), None).unwrap();
    let (spain, stockholm) = (scn.infra.index_of("spain").unwrap(), scn.infra.index_of("stockholm").unwrap());
    let hours = scn.ticks() as f64 / 12.0;
    let metrics = scn.table.lookup(DEATHSTAR_RPS).clone();
    let ci = |r: usize| scn.infra.carbon[r].values()[0];
    let cheapest = |r: usize, cpu: f64, mem: f64| {
        scn.infra.pricing.instances(r).iter().filter(|i| i.vcpu >= cpu && i.mem_gb >= mem).map(|i| i.price).fold(f64::INFINITY, f64::min)
    };
    DEATHSTAR_STATIC_PLACEMENTS
        .iter()
        .map(|&(label, moved)| {
            let region = |id: u32| if moved.contains(&id) { stockholm } else { spain };
            let mut carbon_g_per_hour = 0.0;
            let mut compute_per_hour = 0.0;
            for s in scn.dag.services() {
                let m = &metrics[&s.profile_key];
                carbon_g_per_hour += m.energy_j * 12.0 / 3.6e6 * ci(region(s.id));
                compute_per_hour += cheapest(region(s.id), m.cpu_cores, m.mem_gb);
            }
            let cross_calls: f64 = scn
                .dag
                .edges()
                .iter()
                .filter(|e| region(e.caller) != region(e.callee))
                .map(|e| f64::from(e.calls))
                .sum();
            let egress_per_hour = cross_calls * 0.02 * DEATHSTAR_PAYLOAD_GB * DEATHSTAR_RPS * 3600.0;
            let replicas = if moved.is_empty() { 1.0 } else { 2.0 };
            let storage_per_hour = 0.10 / HOURS_PER_MONTH * scn.spec.image_gb * replicas;

            let regions: BTreeMap<u32, usize> = moved.iter().map(|&id| (id, stockholm)).collect();
            let mut s = FixedStrategy::new(label, regions);
            let out = simulate(&scn, &mut s, &RunOptions::default()).unwrap();
            Replay {
                label,
                moved,
                summary: out.summary,
                carbon_oracle: carbon_g_per_hour * hours / 1000.0,
                cost_oracle: (compute_per_hour + egress_per_hour + storage_per_hour) * hours,
            }
        })
        .collect()
}

#[test]
fn carbon_and_cost_follow_first_principles() {
    let runs = replays();
    for r in &runs {
        let rel = |a: f64, b: f64| (a - b).abs() / b;
        assert!(rel(r.summary.carbon_kg, r.carbon_oracle) < 1e-9, "{}: {} vs {}", r.label, r.summary.carbon_kg, r.carbon_oracle);
        assert!(rel(r.summary.cost_usd, r.cost_oracle) < 1e-9, "{}: {} vs {}", r.label, r.summary.cost_usd, r.cost_oracle);
    }
    let sim_carbon: Vec<f64> = runs.iter().map(|r| r.summary.carbon_kg).collect();
    let sim_cost: Vec<f64> = runs.iter().map(|r| r.summary.cost_usd).collect();
    let ref_carbon: Vec<f64> = runs.iter().map(|r| r.carbon_oracle).collect();
    let ref_cost: Vec<f64> = runs.iter().map(|r| r.cost_oracle).collect();
    assert!((spearman(&sim_carbon, &ref_carbon) - 1.0).abs() < 1e-12);
    assert!((spearman(&sim_cost, &ref_cost) - 1.0).abs() < 1e-12);
}

#[test]
fn moving_everything_cuts_carbon_most() {
    let runs = replays();
    let all = runs.iter().find(|r| r.label == "all").unwrap();
    let none = runs.iter().find(|r| r.label == "spain").unwrap();
    for r in &runs {
        assert!(all.summary.carbon_kg <= r.summary.carbon_kg);
        assert!(none.summary.carbon_kg >= r.summary.carbon_kg);
    }
}

#[test]
fn latency_separates_early_and_late_subtrees() {
    let runs = replays();
    let late = |r: &Replay| r.moved.iter().any(|id| (8..=11).contains(id));
    let early = |r: &Replay| !r.moved.is_empty() && r.moved.iter().all(|id| (2..=7).contains(id));
    let early_max = runs.iter().filter(|r| early(r)).map(|r| r.summary.mean_latency_ms).fold(0.0, f64::max);
    let late_min = runs.iter().filter(|r| late(r)).map(|r| r.summary.mean_latency_ms).fold(f64::INFINITY, f64::min);
    assert!(early_max < late_min, "early subtrees up to {early_max} ms, late from {late_min} ms");
    let none = runs.iter().find(|r| r.moved.is_empty()).unwrap();
    assert!(runs.iter().all(|r| r.summary.mean_latency_ms >= none.summary.mean_latency_ms));
}

#[test]
fn model_latency_matches_path_enumeration() {
    let scn = Scenario::load(&fixture("deathstar/scenario.json"), None).unwrap();
    let (spain, stockholm) = (scn.infra.index_of("spain").unwrap(), scn.infra.index_of("stockholm").unwrap());
    let metrics = scn.table.lookup(DEATHSTAR_RPS);
    let lat: Vec<f64> = scn.dag.services().iter().map(|s| metrics[&s.profile_key].latency_ms).collect();
    for r in replays() {
        let assign: Vec<usize> =
            scn.dag.services().iter().map(|s| if r.moved.contains(&s.id) { stockholm } else { spain }).collect();
        let oracle = latency_by_paths(&scn.dag, &assign, &lat, &scn.infra.rtt, spain);
        assert!((r.summary.max_latency_ms - oracle).abs() < 1e-9, "{}: {} vs {oracle}", r.label, r.summary.max_latency_ms);
    }
}
