//! Synthetic inputs: traffic, carbon-intensity traces, layered service DAGs,
//! workload profile models and region catalogs.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::Path;

use chrono::{DateTime, Duration, Timelike, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::app::{AppDag, AppSpec, CallEdge, ServiceKind, ServiceSpec};
use crate::error::{Error, Result};
use crate::forecast::{TrafficTrace, STEP_MINUTES};
use crate::infra::{CarbonTrace, Infra, InstanceType, PricingCatalog, Region, RegionSet, RttMatrix};
use crate::profiler::{ProfileMetrics, ProfileSample};
use crate::seed::derive_seed;

const STEP_SECONDS: f64 = (STEP_MINUTES * 60) as f64;

/// Utilization cap of the queueing latency model.
const MAX_UTILIZATION: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrafficGen {
    /// Mean request rate in req/s before bursts.
    pub mean_rate: f64,
    /// Relative amplitude of the daily cycle.
    pub diurnal_amplitude: f64,
    pub peak_hour: f64,
    /// Multiplier applied on Saturdays and Sundays.
    pub weekend_factor: f64,
    /// Lognormal sigma of per-interval rate noise on top of Poisson arrivals.
    pub noise_sigma: f64,
    pub bursts_per_day: f64,
    pub burst_min_minutes: i64,
    pub burst_max_minutes: i64,
    pub burst_scale_min: f64,
    pub burst_scale_max: f64,
}

impl Default for TrafficGen {
    fn default() -> Self {
        TrafficGen {
            mean_rate: 300.0,
            diurnal_amplitude: 0.5,
            peak_hour: 14.0,
            weekend_factor: 1.0,
            noise_sigma: 0.05,
            bursts_per_day: 1.0,
            burst_min_minutes: 15,
            burst_max_minutes: 45,
            burst_scale_min: 1.5,
            burst_scale_max: 2.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Burst {
    pub start_index: usize,
    pub minutes: i64,
    pub scale: f64,
}

/// Poisson arrivals per 5-minute interval around a diurnal rate, with
/// lognormal overdispersion and short multiplicative bursts.
pub fn generate_traffic(cfg: &TrafficGen, start: DateTime<Utc>, samples: usize, seed: u64) -> Result<(TrafficTrace, Vec<Burst>)> {
    if cfg.burst_min_minutes < STEP_MINUTES || cfg.burst_max_minutes < cfg.burst_min_minutes {
        return Err(Error::InvalidConfig(format!("burst duration range {}..{}", cfg.burst_min_minutes, cfg.burst_max_minutes)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_day = (24 * 60 / STEP_MINUTES) as usize;
    let days = samples.div_ceil(per_day);
    let mut bursts = Vec::new();
    if cfg.bursts_per_day > 0.0 {
        let count = Poisson::new(cfg.bursts_per_day * days as f64).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let n: f64 = count.sample(&mut rng);
        let steps_lo = cfg.burst_min_minutes / STEP_MINUTES;
        let steps_hi = cfg.burst_max_minutes / STEP_MINUTES;
        for _ in 0..n as usize {
            bursts.push(Burst {
                start_index: rng.random_range(0..samples),
                minutes: rng.random_range(steps_lo..=steps_hi) * STEP_MINUTES,
                scale: rng.random_range(cfg.burst_scale_min..=cfg.burst_scale_max),
            });
        }
        bursts.sort_by_key(|b| b.start_index);
    }
    let noise = LogNormal::new(-0.5 * cfg.noise_sigma * cfg.noise_sigma, cfg.noise_sigma.max(0.0))
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut values = Vec::with_capacity(samples);
    for i in 0..samples {
        let t = start + Duration::minutes(STEP_MINUTES * i as i64);
        let hour = f64::from(t.hour()) + f64::from(t.minute()) / 60.0;
        let mut rate = cfg.mean_rate * (1.0 + cfg.diurnal_amplitude * (TAU * (hour - cfg.peak_hour) / 24.0).cos());
        if matches!(t.format("%u").to_string().as_str(), "6" | "7") {
            rate *= cfg.weekend_factor;
        }
        for b in &bursts {
            if i >= b.start_index && i < b.start_index + (b.minutes / STEP_MINUTES) as usize {
                rate *= b.scale;
            }
        }
        if cfg.noise_sigma > 0.0 {
            rate *= noise.sample(&mut rng);
        }
        let lambda = rate.max(0.0) * STEP_SECONDS;
        let arrivals = if lambda > 0.0 { Poisson::new(lambda).expect("positive rate").sample(&mut rng) } else { 0.0 };
        values.push(arrivals / STEP_SECONDS);
    }
    Ok((TrafficTrace::new(start, values)?, bursts))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiProfile {
    pub mean: f64,
    /// Relative amplitude of the daily cycle.
    pub amplitude: f64,
    /// Hour of maximum intensity.
    pub peak_hour: f64,
    /// Relative sigma of AR(1) noise.
    pub noise: f64,
}

/// Hourly carbon intensity: a daily cosine plus autocorrelated noise.
pub fn generate_ci(region_id: &str, p: &CiProfile, start: DateTime<Utc>, hours: usize, seed: u64) -> Result<CarbonTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut e = 0.0;
    let values = (0..hours)
        .map(|h| {
            let hour = f64::from((start + Duration::hours(h as i64)).hour());
            e = 0.7 * e + p.noise * normal.sample(&mut rng);
            let v = p.mean * (1.0 + p.amplitude * (TAU * (hour - p.peak_hour) / 24.0).cos() + e);
            (v.max(0.0) * 10.0).round() / 10.0
        })
        .collect();
    CarbonTrace::new(region_id, start, values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionSpec {
    pub id: &'static str,
    pub display_name: &'static str,
    pub group: &'static str,
    pub lat: f64,
    pub lon: f64,
    pub ci: CiProfile,
    /// Hourly price of the 2 vCPU / 4 GB shape.
    pub medium_price: f64,
}

const fn region(
    id: &'static str,
    display_name: &'static str,
    group: &'static str,
    lat: f64,
    lon: f64,
    ci: (f64, f64, f64, f64),
    medium_price: f64,
) -> RegionSpec {
    RegionSpec {
        id,
        display_name,
        group,
        lat,
        lon,
        ci: CiProfile { mean: ci.0, amplitude: ci.1, peak_hour: ci.2, noise: ci.3 },
        medium_price,
    }
}

/// Ten European regions with carbon and price levels loosely following
/// public averages. Frankfurt is the conventional base region.
pub fn eu_regions() -> Vec<RegionSpec> {
    vec![
        region("frankfurt", "Frankfurt", "EU", 50.1, 8.7, (350.0, 0.18, 19.0, 0.02), 0.0480),
        region("stockholm", "Stockholm", "EU", 59.3, 18.1, (30.0, 0.08, 18.0, 0.02), 0.0432),
        region("paris", "Paris", "EU", 48.9, 2.35, (60.0, 0.12, 19.0, 0.02), 0.0472),
        region("london", "London", "EU", 51.5, -0.1, (200.0, 0.12, 18.0, 0.02), 0.0472),
        region("spain", "Spain", "EU", 41.6, -0.9, (150.0, 0.22, 21.0, 0.03), 0.0456),
        region("ireland", "Ireland", "EU", 53.3, -6.3, (380.0, 0.08, 18.0, 0.02), 0.0456),
        region("milan", "Milan", "EU", 45.5, 9.2, (330.0, 0.08, 19.0, 0.02), 0.0504),
        region("zurich", "Zurich", "EU", 47.4, 8.5, (40.0, 0.08, 19.0, 0.02), 0.0528),
        region("amsterdam", "Amsterdam", "EU", 52.4, 4.9, (360.0, 0.1, 19.0, 0.02), 0.0480),
        region("warsaw", "Warsaw", "EU", 52.2, 21.0, (700.0, 0.06, 19.0, 0.02), 0.0470),
    ]
}

/// North American regions used by the all-regions catalog.
pub fn na_regions() -> Vec<RegionSpec> {
    vec![
        region("calgary", "Calgary", "NA", 51.0, -114.1, (450.0, 0.08, 19.0, 0.02), 0.0464),
        region("montreal", "Montreal", "NA", 45.5, -73.6, (30.0, 0.08, 19.0, 0.02), 0.0464),
        region("virginia", "Virginia", "NA", 38.9, -77.4, (330.0, 0.1, 19.0, 0.02), 0.0416),
        region("ohio", "Ohio", "NA", 40.0, -83.0, (420.0, 0.1, 19.0, 0.02), 0.0416),
        region("oregon", "Oregon", "NA", 45.6, -121.2, (120.0, 0.12, 19.0, 0.02), 0.0416),
        region("california", "California", "NA", 37.4, -122.0, (220.0, 0.2, 20.0, 0.02), 0.0496),
    ]
}

fn distance_km(a: &RegionSpec, b: &RegionSpec) -> f64 {
    let (la1, lo1, la2, lo2) = (a.lat.to_radians(), a.lon.to_radians(), b.lat.to_radians(), b.lon.to_radians());
    let h = ((la2 - la1) / 2.0).sin().powi(2) + la1.cos() * la2.cos() * ((lo2 - lo1) / 2.0).sin().powi(2);
    2.0 * 6371.0 * h.sqrt().asin()
}

/// Instance family scaled so the 2 vCPU / 4 GB shape costs `medium`.
pub fn instance_family(medium: f64) -> Vec<InstanceType> {
    [("micro", 2.0, 1.0, 0.25), ("small", 2.0, 2.0, 0.5), ("medium", 2.0, 4.0, 1.0), ("large", 2.0, 8.0, 2.0), ("xlarge", 4.0, 16.0, 4.0), ("2xlarge", 8.0, 32.0, 8.0)]
        .into_iter()
        .map(|(name, vcpu, mem_gb, k)| InstanceType {
            name: format!("t3.{name}"),
            vcpu,
            mem_gb,
            price: (medium * k * 1e6).round() / 1e6,
        })
        .collect()
}

/// Infra bundle with synthetic carbon traces, distance-based RTTs and
/// group-dependent egress prices.
pub fn build_infra(specs: &[RegionSpec], start: DateTime<Utc>, hours: usize, seed: u64) -> Result<Infra> {
    let regions = RegionSet::new(
        specs
            .iter()
            .map(|s| Region { id: s.id.into(), display_name: s.display_name.into(), sovereignty_group: s.group.into() })
            .collect(),
    )?;
    let carbon = specs
        .iter()
        .map(|s| generate_ci(s.id, &s.ci, start, hours, derive_seed(seed, &format!("ci/{}", s.id))))
        .collect::<Result<Vec<_>>>()?;
    let n = specs.len();
    let mut egress = vec![0.0; n * n];
    let mut rtt = vec![0.0; n * n];
    for (i, a) in specs.iter().enumerate() {
        for (j, b) in specs.iter().enumerate() {
            if i == j {
                rtt[i * n + j] = 0.5;
                continue;
            }
            egress[i * n + j] = if a.group == b.group { 0.02 } else { 0.09 };
            rtt[i * n + j] = ((5.0 + distance_km(a, b) / 60.0) * 10.0).round() / 10.0;
        }
    }
    let pricing = PricingCatalog::new(specs.iter().map(|s| instance_family(s.medium_price)).collect(), 0.10, egress)?;
    let rtt = RttMatrix::new(specs.iter().map(|s| s.id.to_string()).collect(), rtt)?;
    Infra::new(regions, carbon, pricing, rtt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DagGen {
    pub compute: usize,
    pub layers: usize,
    /// Fraction of compute services that own a database.
    pub db_fraction: f64,
    /// Probability of a second caller from an earlier layer.
    pub extra_caller_prob: f64,
    /// Round trips on service-to-database edges.
    pub db_calls: u32,
}

impl Default for DagGen {
    fn default() -> Self {
        DagGen { compute: 80, layers: 8, db_fraction: 0.25, extra_caller_prob: 0.3, db_calls: 2 }
    }
}

/// Random layered DAG: a frontend, `compute` services spread over `layers`
/// layers (each called from the previous layer), and database leaves.
pub fn random_layered_dag(cfg: &DagGen, seed: u64) -> Result<AppDag> {
    if cfg.compute == 0 || cfg.layers == 0 || cfg.layers > cfg.compute {
        return Err(Error::InvalidConfig(format!("dag generator {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut services = vec![ServiceSpec {
        id: 0,
        name: "frontend".into(),
        kind: ServiceKind::Frontend,
        profile_key: "frontend".into(),
        pinned: false,
    }];
    let mut layers: Vec<Vec<u32>> = vec![vec![0]];
    for l in 0..cfg.layers {
        let lo = l * cfg.compute / cfg.layers;
        let hi = (l + 1) * cfg.compute / cfg.layers;
        layers.push((lo as u32 + 1..=hi as u32).collect());
    }
    let mut edges = Vec::new();
    for l in 1..layers.len() {
        for &v in &layers[l] {
            services.push(ServiceSpec {
                id: v,
                name: format!("svc-{v}"),
                kind: ServiceKind::Compute,
                profile_key: format!("svc-{v}"),
                pinned: false,
            });
            let prev = &layers[l - 1];
            let caller = prev[rng.random_range(0..prev.len())];
            edges.push(CallEdge::new(caller, v));
            if l >= 2 && rng.random::<f64>() < cfg.extra_caller_prob {
                let layer = rng.random_range(1..l);
                let extra = layers[layer][rng.random_range(0..layers[layer].len())];
                if extra != caller {
                    edges.push(CallEdge::new(extra, v));
                }
            }
        }
    }
    let mut next_id = cfg.compute as u32 + 1;
    for owner in 1..=cfg.compute as u32 {
        if rng.random::<f64>() < cfg.db_fraction {
            services.push(ServiceSpec {
                id: next_id,
                name: format!("db-{owner}"),
                kind: ServiceKind::Database,
                profile_key: format!("db-{owner}"),
                pinned: false,
            });
            edges.push(CallEdge::with_calls(owner, next_id, cfg.db_calls));
            next_id += 1;
        }
    }
    AppDag::from_spec(AppSpec { services, edges, frontend: 0, notes: vec![] })
}

/// Load-dependent model of one service.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceModel {
    pub idle_w: f64,
    pub w_per_rps: f64,
    /// Latency with no load.
    pub latency_ms: f64,
    /// Load at which queueing delay diverges; latency grows as 1 / (1 - load / capacity).
    pub capacity_rps: f64,
    pub cpu_base: f64,
    pub cpu_per_krps: f64,
    pub mem_gb: f64,
    pub net_mbps_per_rps: f64,
}

impl ServiceModel {
    pub fn metrics(&self, traffic: f64) -> ProfileMetrics {
        ProfileMetrics {
            energy_j: (self.idle_w + self.w_per_rps * traffic) * STEP_SECONDS,
            latency_ms: self.latency_ms / (1.0 - (traffic / self.capacity_rps).min(MAX_UTILIZATION)),
            cpu_cores: self.cpu_base + self.cpu_per_krps * traffic / 1000.0,
            mem_gb: self.mem_gb,
            net_mbps: self.net_mbps_per_rps * traffic,
        }
    }
}

/// Parameter ranges for [`ProfileModel::random_for`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileGen {
    pub idle_w: (f64, f64),
    pub w_per_rps: (f64, f64),
    pub latency_ms: (f64, f64),
    pub capacity_rps: (f64, f64),
    pub db_latency_ms: (f64, f64),
    pub db_capacity_rps: (f64, f64),
}

impl Default for ProfileGen {
    fn default() -> Self {
        ProfileGen {
            idle_w: (10.0, 22.0),
            w_per_rps: (0.02, 0.06),
            latency_ms: (2.0, 6.0),
            capacity_rps: (1200.0, 1600.0),
            db_latency_ms: (0.8, 2.0),
            db_capacity_rps: (2500.0, 4000.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileModel {
    pub services: BTreeMap<String, ServiceModel>,
}

impl ProfileModel {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::infra::write_json(path, self)
    }

    /// Random model for every service of `dag`.
    pub fn random_for(dag: &AppDag, cfg: &ProfileGen, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |r: (f64, f64)| if r.1 > r.0 { rng.random_range(r.0..r.1) } else { r.0 };
        let services = dag
            .services()
            .iter()
            .map(|s| {
                let m = match s.kind {
                    ServiceKind::Database => ServiceModel {
                        idle_w: draw((8.0, 14.0)),
                        w_per_rps: draw((0.01, 0.02)),
                        latency_ms: draw(cfg.db_latency_ms),
                        capacity_rps: draw(cfg.db_capacity_rps),
                        cpu_base: 0.3,
                        cpu_per_krps: 0.8,
                        mem_gb: draw((1.0, 3.0)),
                        net_mbps_per_rps: 0.02,
                    },
                    _ => ServiceModel {
                        idle_w: draw(cfg.idle_w),
                        w_per_rps: draw(cfg.w_per_rps),
                        latency_ms: draw(cfg.latency_ms),
                        capacity_rps: draw(cfg.capacity_rps),
                        cpu_base: draw((0.2, 0.6)),
                        cpu_per_krps: draw((1.0, 2.5)),
                        mem_gb: [1.0, 1.5, 3.0, 3.5, 6.0][(draw((0.0, 5.0)) as usize).min(4)],
                        net_mbps_per_rps: draw((0.01, 0.05)),
                    },
                };
                (s.profile_key.clone(), m)
            })
            .collect();
        ProfileModel { services }
    }

    /// Profiling samples at uniformly swept load levels on the 5-minute
    /// grid ending just before `end`, with multiplicative lognormal noise.
    pub fn sample(&self, end: DateTime<Utc>, n: usize, traffic_range: (f64, f64), noise: f64, seed: u64) -> Vec<ProfileSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let jitter = LogNormal::new(0.0, noise.max(1e-12)).expect("valid sigma");
        (0..n)
            .map(|i| {
                let timestamp = end - Duration::minutes(STEP_MINUTES * (n - i) as i64);
                let traffic = (rng.random_range(traffic_range.0..=traffic_range.1) * 100.0).round() / 100.0;
                let per_ms = self
                    .services
                    .iter()
                    .map(|(k, m)| {
                        let base = m.metrics(traffic);
                        let mut j = || if noise > 0.0 { jitter.sample(&mut rng) } else { 1.0 };
                        let metrics = ProfileMetrics {
                            energy_j: base.energy_j * j(),
                            latency_ms: base.latency_ms * j(),
                            cpu_cores: base.cpu_cores * j(),
                            mem_gb: base.mem_gb,
                            net_mbps: base.net_mbps * j(),
                        };
                        (k.clone(), metrics)
                    })
                    .collect();
                ProfileSample { timestamp, traffic, per_ms }
            })
            .collect()
    }
}
