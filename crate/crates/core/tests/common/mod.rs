//! Builders and independent oracles shared by the integration tests.

#![allow(dead_code)]

use std::path::PathBuf;

use chrono::{DateTime, TimeZone, Utc};
use geoplace_core::gen::instance_family;
use geoplace_core::{
    AppDag, AppSpec, CallEdge, CarbonTrace, Infra, PricingCatalog, Region, RegionSet, RttMatrix, ServiceKind, ServiceProfile,
    ServiceSpec,
};
use rand::Rng;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures")).join(rel)
}

pub fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
}

/// Frontend 0, compute services `1..=compute`, optionally one store owned by
/// a random compute service. Every service is reachable from the frontend.
pub fn random_dag(rng: &mut impl Rng, compute: usize, with_store: bool) -> AppDag {
    let mut services = vec![ServiceSpec {
        id: 0,
        name: "frontend".into(),
        kind: ServiceKind::Frontend,
        profile_key: "frontend".into(),
        pinned: false,
    }];
    let mut edges = Vec::new();
    for i in 1..=compute as u32 {
        services.push(ServiceSpec {
            id: i,
            name: format!("svc{i}"),
            kind: ServiceKind::Compute,
            profile_key: format!("svc{i}"),
            pinned: false,
        });
        let parent = rng.random_range(0..i);
        edges.push(CallEdge::with_calls(parent, i, rng.random_range(1..=3)));
        for extra in 0..i {
            if extra != parent && rng.random_bool(0.25) {
                edges.push(CallEdge::with_calls(extra, i, rng.random_range(1..=2)));
            }
        }
    }
    if with_store && compute > 0 {
        let id = compute as u32 + 1;
        services.push(ServiceSpec {
            id,
            name: "store".into(),
            kind: ServiceKind::Database,
            profile_key: "store".into(),
            pinned: false,
        });
        edges.push(CallEdge::with_calls(rng.random_range(1..=compute as u32), id, rng.random_range(1..=4)));
    }
    AppDag::from_spec(AppSpec { services, edges, frontend: 0, notes: Vec::new() }).expect("valid random dag")
}

/// `n` regions with constant carbon, scaled instance prices and symmetric RTTs.
pub fn random_infra(rng: &mut impl Rng, n: usize, ci: &[f64]) -> Infra {
    assert_eq!(ci.len(), n);
    let ids: Vec<String> = (0..n).map(|i| format!("r{i}")).collect();
    let regions = RegionSet::new(
        ids.iter().map(|id| Region { id: id.clone(), display_name: id.to_uppercase(), sovereignty_group: "EU".into() }).collect(),
    )
    .unwrap();
    let carbon = ids.iter().zip(ci).map(|(id, &c)| CarbonTrace::new(id.clone(), t0(), vec![c; 48]).unwrap()).collect();
    let families = (0..n).map(|_| instance_family(0.0456 * rng.random_range(0.85..1.15))).collect();
    let egress = (0..n * n).map(|k| if k / n == k % n { 0.0 } else { 0.02 }).collect();
    let pricing = PricingCatalog::new(families, 0.10, egress).unwrap();
    let mut rtt = vec![0.5; n * n];
    for a in 0..n {
        for b in a + 1..n {
            let ms = rng.random_range(5.0..60.0_f64).round();
            rtt[a * n + b] = ms;
            rtt[b * n + a] = ms;
        }
    }
    Infra::new(regions, carbon, pricing, RttMatrix::new(ids, rtt).unwrap()).unwrap()
}

pub fn random_profiles(rng: &mut impl Rng, dag: &AppDag) -> Vec<ServiceProfile> {
    (0..dag.len())
        .map(|_| ServiceProfile {
            energy_j: rng.random_range(500.0..20_000.0),
            latency_ms: rng.random_range(1.0..20.0),
            cpu_cores: 1.0,
            mem_gb: rng.random_range(1.0..4.0),
        })
        .collect()
}

/// Longest request path found by walking every path from the frontend.
pub fn latency_by_paths(dag: &AppDag, assign: &[usize], latency_ms: &[f64], rtt: &RttMatrix, base: usize) -> f64 {
    fn walk(dag: &AppDag, v: usize, acc: f64, assign: &[usize], lat: &[f64], rtt: &RttMatrix, base: usize) -> f64 {
        let here = acc + lat[v];
        let succs = dag.succs(v);
        if succs.is_empty() {
            return here + rtt.get(assign[v], base);
        }
        succs
            .iter()
            .map(|&(s, calls)| walk(dag, s, here + f64::from(calls) * rtt.get(assign[v], assign[s]), assign, lat, rtt, base))
            .fold(f64::NEG_INFINITY, f64::max)
    }
    let root = dag.index_of(dag.frontend()).unwrap();
    walk(dag, root, 0.0, assign, latency_ms, rtt, base)
}

/// Region filter decided pair by pair against the base.
pub fn filter_by_dominance(base: usize, candidates: &[usize], ci: &[f64], price: &[f64], conservative: bool) -> Vec<usize> {
    let no_better = |c: usize| ci[c] >= ci[base] && price[c] >= price[base];
    let strictly_worse = |c: usize| ci[c] > ci[base] || price[c] > price[base];
    let beats_both = |c: usize| ci[c] < ci[base] && price[c] < price[base];
    let beats_one = |c: usize| (ci[c] < ci[base]) != (price[c] < price[base]);
    let any_double = candidates.iter().any(|&c| beats_both(c));
    let mut kept = Vec::new();
    for &c in candidates {
        let keep = if c == base {
            true
        } else if no_better(c) && strictly_worse(c) {
            false
        } else {
            !(conservative && any_double && beats_one(c))
        };
        if keep {
            kept.push(c);
        }
    }
    kept
}

/// Every assignment of `genes` positions to `alleles` values, in odometer order.
pub fn for_each_assignment(genes: usize, alleles: usize, mut f: impl FnMut(&[usize])) {
    let mut a = vec![0; genes];
    loop {
        f(&a);
        let mut i = 0;
        loop {
            if i == genes {
                return;
            }
            a[i] += 1;
            if a[i] < alleles {
                break;
            }
            a[i] = 0;
            i += 1;
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Ranks with ties sharing their average rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && (xs[idx[j + 1]] - xs[idx[i]]).abs() <= 1e-9 * xs[idx[i]].abs().max(1.0) {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let (ma, mb) = (mean(&ra), mean(&rb));
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
