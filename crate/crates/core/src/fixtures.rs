//! Reference scenarios shipped under `fixtures/`.
//!
//! `deathstar` is the 24-node DeathStarBench social-network application (12 compute services and
//! 12 caches/databases) across two regions with flat load and flat carbon
//! intensity. `eu` is a generated 100-service application over ten European
//! regions with diurnal load and carbon.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Duration, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::app::{AppDag, AppSpec, CallEdge, ServiceKind, ServiceSpec};
use crate::error::{Error, Result};
use crate::forecast::TrafficTrace;
use crate::gen::{self, CiProfile, DagGen, ProfileGen, ProfileModel, TrafficGen};
use crate::infra::{write_json, CarbonTrace, Infra, InstanceType, PricingCatalog, Region, RegionSet, RttMatrix};
use crate::optimizer::{GaConfig, Weights};
use crate::profiler::{write_samples, ProfileMetrics, ProfileSample};
use crate::seed::derive_seed;
use crate::timefmt::fmt_ts;

/// Compute services of the social network: (name, latency ms, energy share %, memory GB).
const DEATHSTAR_COMPUTE: [(&str, f64, f64, f64); 12] = [
    ("nginx-web-server", 4.0, 6.0, 3.0),
    ("compose-post-service", 3.6, 9.0, 3.0),
    ("text-service", 5.0, 4.5, 6.0),
    ("user-mention-service", 5.0, 4.5, 6.0),
    ("user-service", 5.0, 4.0, 6.0),
    ("unique-id-service", 3.0, 3.75, 6.0),
    ("media-service", 6.0, 5.5, 6.0),
    ("url-shorten-service", 6.0, 4.0, 6.0),
    ("home-timeline-service", 7.0, 5.25, 3.0),
    ("social-graph-service", 6.0, 4.5, 3.0),
    ("user-timeline-service", 6.0, 4.0, 3.0),
    ("post-storage-service", 6.0, 4.75, 3.0),
];

/// Storage owners with their cache flavour and round trips per request.
const DEATHSTAR_STORES: [(u32, &str, &str, u32); 6] = [
    (4, "user", "memcached", 1),
    (6, "media", "memcached", 1),
    (7, "url-shorten", "memcached", 1),
    (9, "social-graph", "redis", 10),
    (10, "user-timeline", "redis", 10),
    (11, "post-storage", "memcached", 10),
];

const DEATHSTAR_EDGES: [(u32, u32, u32); 16] = [
    (0, 1, 10),
    (1, 4, 1),
    (1, 5, 1),
    (1, 6, 1),
    (4, 2, 1),
    (5, 2, 1),
    (6, 2, 1),
    (2, 3, 1),
    (2, 7, 1),
    (3, 10, 1),
    (3, 11, 1),
    (7, 10, 1),
    (7, 11, 1),
    (10, 8, 1),
    (11, 8, 1),
    (8, 9, 10),
];

/// Joules per 5-minute interval for the whole social application.
const DEATHSTAR_ENERGY_J: f64 = 72_000.0;
const DEATHSTAR_STORE_SHARE: f64 = 40.25 / 12.0;
pub const DEATHSTAR_RPS: f64 = 100.0;
pub const DEATHSTAR_PAYLOAD_GB: f64 = 9.0e-8;

/// Static placements of the social network moved from Spain to Stockholm,
/// by compute service index. The first entry moves nothing.
pub const DEATHSTAR_STATIC_PLACEMENTS: [(&str, &[u32]); 15] = [
    ("spain", &[]),
    ("M5", &[5]),
    ("M6", &[6]),
    ("M4", &[4]),
    ("M11", &[11]),
    ("M2,M3,M7", &[2, 3, 7]),
    ("M2-M7", &[2, 3, 4, 5, 6, 7]),
    ("M8,M9", &[8, 9]),
    ("M7-M11", &[7, 8, 9, 10, 11]),
    ("M2-M3,M7-M11", &[2, 3, 7, 8, 9, 10, 11]),
    ("M2-M6", &[2, 3, 4, 5, 6]),
    ("M4,M6-M7,M9-M11", &[4, 6, 7, 9, 10, 11]),
    ("M3-M7,M9-M11", &[3, 4, 5, 6, 7, 9, 10, 11]),
    ("M2-M11", &[2, 3, 4, 5, 6, 7, 8, 9, 10, 11]),
    ("all", &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11]),
];

pub fn deathstar_app() -> Result<AppDag> {
    let mut services: Vec<ServiceSpec> = DEATHSTAR_COMPUTE
        .iter()
        .enumerate()
        .map(|(i, (name, ..))| ServiceSpec {
            id: i as u32,
            name: name.to_string(),
            kind: if i == 0 { ServiceKind::Frontend } else { ServiceKind::Compute },
            profile_key: name.to_string(),
            pinned: false,
        })
        .collect();
    let mut edges: Vec<CallEdge> = DEATHSTAR_EDGES.iter().map(|&(a, b, c)| CallEdge::with_calls(a, b, c)).collect();
    let mut notes: Vec<String> = (0..12).map(|i| format!("M{i} = {}", DEATHSTAR_COMPUTE[i].0)).collect();
    for (k, (owner, prefix, cache, calls)) in DEATHSTAR_STORES.iter().enumerate() {
        for (j, flavour) in [*cache, "mongodb"].into_iter().enumerate() {
            let id = 12 + 2 * k as u32 + j as u32;
            let name = format!("{prefix}-{flavour}");
            services.push(ServiceSpec { id, name: name.clone(), kind: ServiceKind::Database, profile_key: name, pinned: false });
            edges.push(CallEdge::with_calls(*owner, id, *calls));
        }
    }
    notes.push("Edges are [caller, callee] or [caller, callee, round_trips_per_request].".into());
    notes.push(
        "M10 and M11 are called from M3 and M7, so they start after them and belong to the subtree rooted at M2.".into(),
    );
    AppDag::from_spec(AppSpec { services, edges, frontend: 0, notes })
}

fn deathstar_metrics(dag: &AppDag) -> BTreeMap<String, ProfileMetrics> {
    dag.services()
        .iter()
        .map(|s| {
            let (latency, share, mem) = match DEATHSTAR_COMPUTE.iter().find(|c| c.0 == s.name) {
                Some(&(_, l, sh, m)) => (l, sh, m),
                None if s.name.ends_with("mongodb") => (1.4, DEATHSTAR_STORE_SHARE, 1.5),
                None => (0.6, DEATHSTAR_STORE_SHARE, 1.5),
            };
            let m = ProfileMetrics {
                energy_j: DEATHSTAR_ENERGY_J * share / 100.0,
                latency_ms: latency,
                cpu_cores: 1.0,
                mem_gb: mem,
                net_mbps: 5.0,
            };
            (s.profile_key.clone(), m)
        })
        .collect()
}

/// Spain and Stockholm with constant intensities of 180 and 36 gCO2eq/kWh.
pub fn deathstar_infra(start: DateTime<Utc>, hours: usize) -> Result<Infra> {
    let regions = RegionSet::new(vec![
        Region { id: "spain".into(), display_name: "Spain".into(), sovereignty_group: "EU".into() },
        Region { id: "stockholm".into(), display_name: "Stockholm".into(), sovereignty_group: "EU".into() },
    ])?;
    let carbon = vec![CarbonTrace::new("spain", start, vec![180.0; hours])?, CarbonTrace::new("stockholm", start, vec![36.0; hours])?];
    let family = |k: f64| -> Vec<InstanceType> {
        [("small", 2.0, 2.0, 0.0228), ("medium", 2.0, 4.0, 0.0456), ("large", 2.0, 8.0, 0.0912), ("xlarge", 4.0, 16.0, 0.1824)]
            .into_iter()
            .map(|(n, vcpu, mem_gb, p)| InstanceType { name: format!("t3.{n}"), vcpu, mem_gb, price: ((p * k) * 1e6).round() / 1e6 })
            .collect()
    };
    let pricing = PricingCatalog::new(vec![family(1.0), family(0.0864 / 0.0912)], 0.10, vec![0.0, 0.02, 0.02, 0.0])?;
    let rtt = RttMatrix::new(vec!["spain".into(), "stockholm".into()], vec![0.5, 24.0, 24.0, 0.5])?;
    Infra::new(regions, carbon, pricing, rtt)
}

fn t(y: i32, m: u32, d: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(y, m, d, 0, 0, 0).unwrap()
}

fn create(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes the DeathStarBench social-network scenario to `dir`.
pub fn write_deathstar(dir: &Path) -> Result<()> {
    create(dir)?;
    let history = t(2023, 8, 7);
    let start = t(2023, 8, 8);
    let end = t(2023, 8, 9);
    let dag = deathstar_app()?;
    dag.save(dir.join("deathstar_social.json"))?;
    deathstar_infra(history, 48)?.save(dir.join("infra"))?;
    TrafficTrace::new(history, vec![DEATHSTAR_RPS; 2 * 288])?.write_csv(&dir.join("traffic.csv"))?;
    let per_ms = deathstar_metrics(&dag);
    let samples: Vec<ProfileSample> = (0..400)
        .map(|i| ProfileSample {
            timestamp: start - Duration::minutes(5 * (400 - i)),
            traffic: 50.0 + (i % 100) as f64,
            per_ms: per_ms.clone(),
        })
        .collect();
    write_samples(&dir.join("profile.csv"), &samples)?;
    let scenario = json!({
        "name": "deathstar-social",
        "app": "deathstar_social.json",
        "infra": "infra",
        "traffic": "traffic.csv",
        "profiles": {"csv": "profile.csv"},
        "base_region": "spain",
        "slo_ms": 300.0,
        "weights": {"w_carbon": 1.0, "w_cost": 1.0},
        "horizon": {"start": fmt_ts(start), "end": fmt_ts(end)},
        "request_payload_gb": DEATHSTAR_PAYLOAD_GB,
        "image_gb": 5.0,
        "migration_delay_ticks": 1,
        "seed": 42,
        "notes": ["Flat load and flat carbon intensity: the initial placement is never revisited."]
    });
    write_json(&dir.join("scenario.json"), &scenario)
}

/// Knobs of the generated European scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EuConfig {
    pub history_days: i64,
    pub horizon_days: i64,
    pub dag: DagGen,
    pub traffic: TrafficGen,
    pub profiles: ProfileGen,
    /// Carbon-intensity profiles replacing the catalog defaults, by region id.
    pub ci: BTreeMap<String, CiProfile>,
    pub slo_ms: f64,
    pub weights: Weights,
    pub ga: GaConfig,
    pub request_payload_gb: f64,
    pub image_gb: f64,
    pub profile_samples: usize,
    pub profile_traffic_max: f64,
    pub profile_noise: f64,
}

impl Default for EuConfig {
    fn default() -> Self {
        EuConfig {
            history_days: 7,
            horizon_days: 4,
            // Stores are queried many times per request, which binds their
            // owners to the base region.
            dag: DagGen { compute: 79, layers: 8, db_fraction: 0.25, extra_caller_prob: 0.3, db_calls: 30 },
            traffic: TrafficGen { mean_rate: 250.0, burst_scale_min: 1.3, burst_scale_max: 1.8, ..TrafficGen::default() },
            profiles: ProfileGen { latency_ms: (1.5, 4.0), capacity_rps: (1200.0, 1300.0), ..ProfileGen::default() },
            ci: BTreeMap::new(),
            slo_ms: 300.0,
            weights: Weights { w_carbon: 0.3, w_cost: 0.7 },
            ga: GaConfig { max_generations: 100, patience: 20, ..GaConfig::default() },
            request_payload_gb: 3e-7,
            image_gb: 5.0,
            profile_samples: 500,
            profile_traffic_max: 1000.0,
            profile_noise: 0.05,
        }
    }
}

/// Writes the generated European scenario to `dir`.
pub fn write_eu(dir: &Path, cfg: &EuConfig, seed: u64) -> Result<()> {
    create(dir)?;
    let history = t(2023, 8, 1);
    let start = history + Duration::days(cfg.history_days);
    let end = start + Duration::days(cfg.horizon_days);
    let hours = ((cfg.history_days + cfg.horizon_days) * 24) as usize;
    let dag = gen::random_layered_dag(&cfg.dag, derive_seed(seed, "dag"))?;
    dag.save(dir.join("app.json"))?;
    let mut regions = gen::eu_regions();
    for r in &mut regions {
        if let Some(p) = cfg.ci.get(r.id) {
            r.ci = *p;
        }
    }
    gen::build_infra(&regions, history, hours, derive_seed(seed, "infra"))?.save(dir.join("infra"))?;
    let (traffic, bursts) = gen::generate_traffic(&cfg.traffic, history, hours * 12, derive_seed(seed, "traffic"))?;
    traffic.write_csv(&dir.join("traffic.csv"))?;
    ProfileModel::random_for(&dag, &cfg.profiles, derive_seed(seed, "profiles")).save(&dir.join("profile_model.json"))?;
    let scenario = json!({
        "name": "eu",
        "app": "app.json",
        "infra": "infra",
        "traffic": "traffic.csv",
        "profiles": {
            "model": "profile_model.json",
            "samples": cfg.profile_samples,
            "traffic_min": 0.0,
            "traffic_max": cfg.profile_traffic_max,
            "noise": cfg.profile_noise,
            "seed": derive_seed(seed, "profiling") % 1_000_000
        },
        "base_region": "frankfurt",
        "slo_ms": cfg.slo_ms,
        "weights": cfg.weights,
        "ga": cfg.ga,
        "horizon": {"start": fmt_ts(start), "end": fmt_ts(end)},
        "request_payload_gb": cfg.request_payload_gb,
        "image_gb": cfg.image_gb,
        "migration_delay_ticks": 1,
        "seed": seed,
        "notes": [format!("{} bursts in the generated traffic", bursts.len())]
    });
    write_json(&dir.join("scenario.json"), &scenario)
}
