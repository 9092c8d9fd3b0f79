//! Placement evaluation: end-to-end latency, carbon rate and cost rate.
//!
//! Placements are dense assignments (`assign[i]` is the region index of the
//! service at dag index `i`); structurally pinned services sit in the base
//! region. Rates are per hour at a fixed traffic level.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::Serialize;

use crate::app::AppDag;
use crate::error::{Error, Result};
use crate::infra::{Infra, RttMatrix, HOURS_PER_MONTH};
use crate::profiler::BucketTable;

pub const TICKS_PER_HOUR: f64 = 12.0;
pub const J_PER_KWH: f64 = 3.6e6;

/// Region index per dag service index.
pub type Assignment = Vec<usize>;

/// Profile representatives of one service at a given load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ServiceProfile {
    /// Joules per 5-minute interval.
    pub energy_j: f64,
    pub latency_ms: f64,
    pub cpu_cores: f64,
    pub mem_gb: f64,
}

/// Looks up every service of `dag` in `table` at `traffic`.
pub fn resolve_profiles(dag: &AppDag, table: &BucketTable, traffic: f64) -> Result<Vec<ServiceProfile>> {
    let row = table.lookup(traffic);
    dag.services()
        .iter()
        .map(|s| {
            let m = row
                .get(&s.profile_key)
                .ok_or_else(|| Error::MissingData(format!("profile for key '{}' (service {})", s.profile_key, s.id)))?;
            Ok(ServiceProfile { energy_j: m.energy_j, latency_ms: m.latency_ms, cpu_cores: m.cpu_cores, mem_gb: m.mem_gb })
        })
        .collect()
}

/// Request completion time: each service starts once all its callers have
/// finished and their round trips (`calls` x RTT) have elapsed; the response
/// returns from the slowest sink to the base region.
pub fn e2e_latency(dag: &AppDag, assign: &[usize], latency_ms: &[f64], rtt: &RttMatrix, base: usize) -> f64 {
    let mut done = vec![0.0; dag.len()];
    for &v in dag.topo_order() {
        let rv = assign[v];
        let start = dag
            .preds(v)
            .iter()
            .map(|&(u, calls)| done[u] + f64::from(calls) * rtt.get(assign[u], rv))
            .fold(0.0, f64::max);
        done[v] = start + latency_ms[v];
    }
    dag.sinks().map(|s| done[s] + rtt.get(assign[s], base)).fold(0.0, f64::max)
}

/// Fraction of `n_draws` requests whose latency, scaled by lognormal(0, sigma)
/// noise, exceeds `slo`. Also returns the mean jittered latency.
pub fn violation_rate(latency: f64, slo: f64, sigma: f64, n_draws: usize, seed: u64) -> (f64, f64) {
    if sigma <= 0.0 || n_draws == 0 {
        return (if latency > slo { 1.0 } else { 0.0 }, latency);
    }
    let dist = LogNormal::new(0.0, sigma).expect("valid lognormal");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut over = 0usize;
    let mut sum = 0.0;
    for _ in 0..n_draws {
        let l = latency * dist.sample(&mut rng);
        sum += l;
        if l > slo {
            over += 1;
        }
    }
    (over as f64 / n_draws as f64, sum / n_draws as f64)
}

/// Inputs that turn a profile set into priced, carbon-weighted rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateInputs {
    pub traffic: f64,
    /// GB per request on each cross-region call.
    pub request_payload_gb: f64,
    /// Container image size of the whole application.
    pub image_gb: f64,
    /// Regions holding a replica of the images.
    pub replica_regions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rates {
    /// gCO2eq per hour.
    pub carbon: f64,
    /// USD per hour, all components.
    pub cost: f64,
    pub compute_cost: f64,
    pub storage_cost: f64,
    pub egress_cost: f64,
    pub latency: f64,
}

/// Precomputed per-(service, region) coefficients for fast repeated evaluation.
#[derive(Debug, Clone)]
pub struct Evaluator<'a> {
    dag: &'a AppDag,
    infra: &'a Infra,
    rtt: &'a RttMatrix,
    base: usize,
    r: usize,
    latency: Vec<f64>,
    carbon_coef: Vec<f64>,
    price: Vec<f64>,
    edges: Vec<(usize, usize, f64)>,
    egress: Vec<f64>,
    gb_per_call_hour: f64,
    storage_cost: f64,
}

impl<'a> Evaluator<'a> {
    /// `ci` holds the carbon intensity of every region in `infra`.
    pub fn new(
        dag: &'a AppDag,
        infra: &'a Infra,
        base: usize,
        profiles: &[ServiceProfile],
        ci: &[f64],
        inputs: RateInputs,
    ) -> Result<Self> {
        let r = infra.len();
        if profiles.len() != dag.len() || ci.len() != r || base >= r {
            return Err(Error::Validation("profile or carbon vectors do not match the app and regions".into()));
        }
        let mut carbon_coef = Vec::with_capacity(dag.len() * r);
        let mut price = Vec::with_capacity(dag.len() * r);
        for p in profiles {
            let kwh_per_hour = p.energy_j * TICKS_PER_HOUR / J_PER_KWH;
            for (region, &ci_r) in ci.iter().enumerate() {
                carbon_coef.push(kwh_per_hour * ci_r);
                let fit = infra.pricing.smallest_instance(region, p.cpu_cores, p.mem_gb);
                if region == base && fit.is_none() {
                    return Err(Error::NoCompatibleInstance {
                        region: infra.regions.get(base).id.clone(),
                        cpu: p.cpu_cores,
                        mem_gb: p.mem_gb,
                    });
                }
                price.push(fit.map_or(f64::INFINITY, |it| it.price));
            }
        }
        let edges = dag
            .edges()
            .iter()
            .map(|e| (dag.index_of(e.caller).unwrap(), dag.index_of(e.callee).unwrap(), f64::from(e.calls)))
            .collect();
        let egress = (0..r * r).map(|k| infra.pricing.egress(k / r, k % r)).collect();
        Ok(Evaluator {
            dag,
            infra,
            rtt: &infra.rtt,
            base,
            r,
            latency: profiles.iter().map(|p| p.latency_ms).collect(),
            carbon_coef,
            price,
            edges,
            egress,
            gb_per_call_hour: inputs.request_payload_gb * inputs.traffic * 3600.0,
            storage_cost: infra.pricing.storage_price() / HOURS_PER_MONTH * inputs.image_gb * inputs.replica_regions as f64,
        })
    }

    pub fn base(&self) -> usize {
        self.base
    }

    pub fn dag(&self) -> &'a AppDag {
        self.dag
    }

    pub fn infra(&self) -> &'a Infra {
        self.infra
    }

    pub fn all_in_base(&self) -> Assignment {
        vec![self.base; self.dag.len()]
    }

    pub fn latency(&self, a: &[usize]) -> f64 {
        e2e_latency(self.dag, a, &self.latency, self.rtt, self.base)
    }

    pub fn carbon(&self, a: &[usize]) -> f64 {
        a.iter().enumerate().map(|(m, &r)| self.carbon_coef[m * self.r + r]).sum()
    }

    pub fn instance_price(&self, service: usize, region: usize) -> f64 {
        self.price[service * self.r + region]
    }

    pub fn compute_cost(&self, a: &[usize]) -> f64 {
        a.iter().enumerate().map(|(m, &r)| self.price[m * self.r + r]).sum()
    }

    pub fn egress_cost(&self, a: &[usize]) -> f64 {
        let usd_per_gb: f64 = self
            .edges
            .iter()
            .filter(|&&(u, v, _)| a[u] != a[v])
            .map(|&(u, v, calls)| calls * self.egress[a[u] * self.r + a[v]])
            .sum();
        usd_per_gb * self.gb_per_call_hour
    }

    pub fn storage_cost(&self) -> f64 {
        self.storage_cost
    }

    pub fn cost(&self, a: &[usize]) -> f64 {
        self.compute_cost(a) + self.storage_cost + self.egress_cost(a)
    }

    pub fn rates(&self, a: &[usize]) -> Rates {
        let compute_cost = self.compute_cost(a);
        let egress_cost = self.egress_cost(a);
        Rates {
            carbon: self.carbon(a),
            cost: compute_cost + self.storage_cost + egress_cost,
            compute_cost,
            storage_cost: self.storage_cost,
            egress_cost,
            latency: self.latency(a),
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::app::tests::dag_from;
    use crate::app::{structural_critical_path, AppDag};
    use crate::infra::{CarbonTrace, InstanceType, PricingCatalog, Region, RegionSet};
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    /// Two regions with flat CI, one instance family and symmetric RTT.
    pub(crate) fn two_region_infra(ci: [f64; 2], rtt_inter: f64, egress: f64) -> Infra {
        let regions = RegionSet::new(
            ["r1", "r2"]
                .iter()
                .map(|id| Region { id: id.to_string(), display_name: id.to_uppercase(), sovereignty_group: "EU".into() })
                .collect(),
        )
        .unwrap();
        let t0 = Utc.with_ymd_and_hms(2023, 8, 1, 0, 0, 0).unwrap();
        let carbon = ["r1", "r2"].iter().zip(ci).map(|(id, c)| CarbonTrace::new(*id, t0, vec![c; 48]).unwrap()).collect();
        let family = |scale: f64| {
            vec![
                InstanceType { name: "small".into(), vcpu: 1.0, mem_gb: 2.0, price: 0.02 * scale },
                InstanceType { name: "large".into(), vcpu: 4.0, mem_gb: 8.0, price: 0.08 * scale },
            ]
        };
        let pricing = PricingCatalog::new(vec![family(1.0), family(0.9)], 0.10, vec![0.0, egress, egress, 0.0]).unwrap();
        let rtt = RttMatrix::new(vec!["r1".into(), "r2".into()], vec![0.0, rtt_inter, rtt_inter, 0.0]).unwrap();
        Infra::new(regions, carbon, pricing, rtt).unwrap()
    }

    fn prof(e: f64, l: f64, cpu: f64) -> ServiceProfile {
        ServiceProfile { energy_j: e, latency_ms: l, cpu_cores: cpu, mem_gb: 1.0 }
    }

    #[test]
    fn two_node_chain_latency() {
        let dag = dag_from(2, &[(0, 1)], &[]).unwrap();
        let rtt = RttMatrix::new(vec!["a".into(), "b".into()], vec![0.0, 30.0, 30.0, 0.0]).unwrap();
        assert_eq!(e2e_latency(&dag, &[0, 1], &[10.0, 5.0], &rtt, 0), 75.0);
        assert_eq!(e2e_latency(&dag, &[0, 0], &[10.0, 5.0], &rtt, 0), 15.0);
    }

    #[test]
    fn violation_rate_limits() {
        assert_eq!(violation_rate(100.0, 300.0, 0.0, 1000, 1).0, 0.0);
        assert_eq!(violation_rate(400.0, 300.0, 0.0, 1000, 1).0, 1.0);
        // median of lognormal(0, s) is 1
        let (v, _) = violation_rate(300.0, 300.0, 0.15, 4000, 9);
        assert!((v - 0.5).abs() < 0.05, "{v}");
    }

    #[test]
    fn hand_computed_rates() {
        let infra = two_region_infra([300.0, 40.0], 20.0, 0.02);
        let dag = dag_from(2, &[(0, 1)], &[]).unwrap();
        // 3.6e5 J per 5 min = 1.2 kWh per hour
        let profiles = [prof(3.6e5, 10.0, 0.5), prof(7.2e5, 5.0, 2.0)];
        let inputs = RateInputs { traffic: 100.0, request_payload_gb: 1e-6, image_gb: 5.0, replica_regions: 2 };
        let ev = Evaluator::new(&dag, &infra, 0, &profiles, &[300.0, 40.0], inputs).unwrap();
        let r = ev.rates(&[0, 1]);
        assert!((r.carbon - (1.2 * 300.0 + 2.4 * 40.0)).abs() < 1e-9);
        assert!((r.compute_cost - (0.02 + 0.072)).abs() < 1e-12);
        // 0.10 USD/GB-month, 5 GB, 2 replicas = 1 USD/month
        assert!((r.storage_cost - 1.0 / HOURS_PER_MONTH).abs() < 1e-12);
        // 100 req/s * 3600 s * 1e-6 GB * 0.02 USD/GB
        assert!((r.egress_cost - 100.0 * 3600.0 * 1e-6 * 0.02).abs() < 1e-12);
        assert_eq!(ev.egress_cost(&[0, 0]), 0.0);
        assert_eq!(r.latency, 10.0 + 20.0 + 5.0 + 20.0);
    }

    #[test]
    fn single_region_carbon_factorizes() {
        let infra = two_region_infra([300.0, 40.0], 20.0, 0.02);
        let dag = dag_from(3, &[(0, 1), (0, 2)], &[]).unwrap();
        let profiles = [prof(1e5, 1.0, 0.5), prof(2e5, 1.0, 0.5), prof(3e5, 1.0, 0.5)];
        let inputs = RateInputs { traffic: 1.0, request_payload_gb: 0.0, image_gb: 0.0, replica_regions: 1 };
        let ev = Evaluator::new(&dag, &infra, 0, &profiles, &[300.0, 40.0], inputs).unwrap();
        let total_kwh = 6e5 * 12.0 / 3.6e6;
        assert!((ev.carbon(&[1, 1, 1]) - 40.0 * total_kwh).abs() < 1e-9);
    }

    fn enumerate_paths(dag: &AppDag) -> Vec<Vec<usize>> {
        fn go(dag: &AppDag, v: usize, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            path.push(v);
            if dag.succs(v).is_empty() {
                out.push(path.clone());
            }
            for &(s, _) in dag.succs(v) {
                go(dag, s, path, out);
            }
            path.pop();
        }
        let mut out = Vec::new();
        go(dag, dag.index_of(dag.frontend()).unwrap(), &mut Vec::new(), &mut out);
        out
    }

    pub(crate) fn arb_dag(max_nodes: u32) -> impl Strategy<Value = AppDag> {
        (1..=max_nodes).prop_flat_map(|n| {
            let pairs: Vec<(u32, u32)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
            let np = pairs.len();
            (Just(n), Just(pairs), prop::collection::vec(any::<bool>(), np), prop::collection::vec(0u32..n.max(1), n as usize))
                .prop_map(|(n, pairs, keep, parent)| {
                    let mut edges: Vec<(u32, u32)> =
                        pairs.iter().zip(&keep).filter(|(_, k)| **k).map(|(p, _)| *p).collect();
                    // guarantee reachability: every node gets one earlier caller
                    for v in 1..n {
                        if !edges.iter().any(|&(_, b)| b == v) {
                            edges.push((parent[v as usize] % v, v));
                        }
                    }
                    edges.retain(|&(_, b)| b != 0);
                    dag_from(n, &edges, &[]).expect("valid random dag")
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn zero_rtt_latency_is_critical_path(dag in arb_dag(12), seed in any::<u64>()) {
            let lat: Vec<f64> = (0..dag.len()).map(|i| ((seed >> (i % 60)) % 50) as f64 + 0.5).collect();
            let rtt = RttMatrix::new(vec!["a".into()], vec![0.0]).unwrap();
            let a = vec![0; dag.len()];
            let weights: BTreeMap<u32, f64> = dag.services().iter().zip(&lat).map(|(s, l)| (s.id, *l)).collect();
            let (_, len) = structural_critical_path(&dag, &weights).unwrap();
            prop_assert!((e2e_latency(&dag, &a, &lat, &rtt, 0) - len).abs() < 1e-9);
        }

        #[test]
        fn latency_matches_path_enumeration(dag in arb_dag(12), seed in any::<u64>(), regions in prop::collection::vec(0usize..3, 12)) {
            let n = dag.len();
            let lat: Vec<f64> = (0..n).map(|i| ((seed >> (i % 50)) % 40) as f64).collect();
            let ms = vec![1.0, 20.0, 35.0, 22.0, 2.0, 15.0, 33.0, 17.0, 0.5];
            let rtt = RttMatrix::new(vec!["a".into(), "b".into(), "c".into()], ms).unwrap();
            let mut a: Vec<usize> = regions[..n].to_vec();
            a[0] = 0;
            let oracle = enumerate_paths(&dag).iter().map(|p| {
                let mut t = 0.0;
                for (k, &v) in p.iter().enumerate() {
                    if k > 0 { t += rtt.get(a[p[k - 1]], a[v]); }
                    t += lat[v];
                }
                t + rtt.get(a[*p.last().unwrap()], 0)
            }).fold(0.0, f64::max);
            prop_assert!((e2e_latency(&dag, &a, &lat, &rtt, 0) - oracle).abs() < 1e-9);
        }

        #[test]
        fn critical_path_matches_enumeration(dag in arb_dag(12), seed in any::<u64>()) {
            let weights: BTreeMap<u32, f64> = dag.services().iter().enumerate()
                .map(|(i, s)| (s.id, ((seed.rotate_left(i as u32 * 5)) % 30) as f64)).collect();
            let (path, len) = structural_critical_path(&dag, &weights).unwrap();
            let paths = enumerate_paths(&dag);
            let best = paths.iter().map(|p| p.iter().map(|&v| weights[&dag.services()[v].id]).sum::<f64>()).fold(0.0, f64::max);
            prop_assert!((len - best).abs() < 1e-9);
            let sum: f64 = path.iter().map(|id| weights[id]).sum();
            prop_assert!((sum - len).abs() < 1e-9);
        }

        #[test]
        fn moving_to_greener_region_never_adds_carbon(dag in arb_dag(10), pick in any::<prop::sample::Index>()) {
            let infra = two_region_infra([300.0, 40.0], 20.0, 0.02);
            let profiles: Vec<ServiceProfile> = (0..dag.len()).map(|_| prof(1e5, 1.0, 0.5)).collect();
            let inputs = RateInputs { traffic: 10.0, request_payload_gb: 0.0, image_gb: 1.0, replica_regions: 2 };
            let ev = Evaluator::new(&dag, &infra, 0, &profiles, &[300.0, 40.0], inputs).unwrap();
            let a = ev.all_in_base();
            let mut b = a.clone();
            b[pick.index(dag.len())] = 1;
            prop_assert!(ev.carbon(&b) <= ev.carbon(&a));
        }
    }
}
