//! Scenario files: what to simulate, with which inputs and knobs.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::app::{activation_stages, ActivationSchedule, AppDag};
use crate::error::{Error, Result};
use crate::forecast::{GbdtConfig, TrafficTrace, LAGS, STEP_MINUTES};
use crate::gen::ProfileModel;
use crate::infra::Infra;
use crate::optimizer::{GaConfig, PinPolicy, Weights};
use crate::profiler::{load_samples, BucketConfig, BucketTable};
use crate::strategy::{SamplingConfig, StrategyConfig};
use crate::timefmt::{fmt_ts, parse_ts};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileSource {
    Csv {
        csv: PathBuf,
    },
    Model {
        model: PathBuf,
        #[serde(default = "default_samples")]
        samples: usize,
        #[serde(default)]
        traffic_min: f64,
        traffic_max: f64,
        #[serde(default)]
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_samples() -> usize {
    500
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForecastMode {
    #[default]
    Gbdt,
    Persistence,
    LagMean,
    /// No forecast: re-optimize whenever the observed load changes bucket.
    Reactive,
}

impl std::str::FromStr for ForecastMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_string()))
            .map_err(|_| Error::InvalidConfig(format!("unknown forecaster mode '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecasterSpec {
    pub mode: ForecastMode,
    pub gbdt: GbdtConfig,
    /// Retrain the model on all past traffic every this many days.
    pub retrain_days: i64,
}

impl Default for ForecasterSpec {
    fn default() -> Self {
        ForecasterSpec { mode: ForecastMode::Gbdt, gbdt: GbdtConfig::default(), retrain_days: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Horizon {
    pub start: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub app: PathBuf,
    pub infra: PathBuf,
    pub traffic: PathBuf,
    pub profiles: ProfileSource,
    pub base_region: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regions_allowed: Option<Vec<String>>,
    pub slo_ms: f64,
    #[serde(default)]
    pub weights: Weights,
    #[serde(default)]
    pub pin: PinPolicy,
    pub horizon: Horizon,
    #[serde(default = "default_sigma")]
    pub jitter_sigma: f64,
    #[serde(default = "default_draws")]
    pub n_draws: usize,
    #[serde(default = "default_delay")]
    pub migration_delay_ticks: usize,
    #[serde(default)]
    pub request_payload_gb: f64,
    #[serde(default)]
    pub image_gb: f64,
    #[serde(default)]
    pub forecaster: ForecasterSpec,
    #[serde(default)]
    pub ga: GaConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub buckets: BucketConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

fn default_sigma() -> f64 {
    0.15
}

fn default_draws() -> usize {
    1000
}

fn default_delay() -> usize {
    1
}

/// Recursively overlays `patch` onto `base`; objects merge key by key,
/// everything else is replaced.
pub fn merge_json(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge_json(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

impl ScenarioSpec {
    pub fn load(path: &Path, overrides: Option<Value>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut v: Value = serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
        if let Some(o) = overrides {
            merge_json(&mut v, o);
        }
        serde_json::from_value(v).map_err(|e| Error::parse(path.display().to_string(), e))
    }

    pub fn strategy_config(&self) -> StrategyConfig {
        StrategyConfig { ga: self.ga, pin: self.pin, sampling: self.sampling }
    }
}

/// A scenario with every input loaded and cross-checked.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub dag: AppDag,
    pub schedule: ActivationSchedule,
    pub infra: Infra,
    pub traffic: TrafficTrace,
    pub table: BucketTable,
    pub base: usize,
    pub allowed: Vec<usize>,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl Scenario {
    pub fn load(path: &Path, overrides: Option<Value>) -> Result<Self> {
        let spec = ScenarioSpec::load(path, overrides)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        Self::load_spec(spec, dir)
    }

    /// Loads inputs named by `spec`, resolving relative paths against `dir`.
    pub fn load_spec(spec: ScenarioSpec, dir: &Path) -> Result<Self> {
        let dag = AppDag::load(dir.join(&spec.app))?;
        let infra = Infra::load(dir.join(&spec.infra))?;
        let traffic = TrafficTrace::load_csv(&dir.join(&spec.traffic))?;
        let start = parse_ts(&spec.horizon.start)?;
        let samples = match &spec.profiles {
            ProfileSource::Csv { csv } => load_samples(&dir.join(csv))?,
            ProfileSource::Model { model, samples, traffic_min, traffic_max, noise, seed } => {
                ProfileModel::load(&dir.join(model))?.sample(start, *samples, (*traffic_min, *traffic_max), *noise, *seed)
            }
        };
        let table = BucketTable::build(samples, spec.buckets)?;
        Self::from_parts(spec, dag, infra, traffic, table)
    }

    pub fn from_parts(spec: ScenarioSpec, dag: AppDag, infra: Infra, traffic: TrafficTrace, table: BucketTable) -> Result<Self> {
        let base = infra.index_of(&spec.base_region)?;
        let allowed = match &spec.regions_allowed {
            Some(ids) => {
                let mut v = ids.iter().map(|id| infra.index_of(id)).collect::<Result<Vec<_>>>()?;
                if !v.contains(&base) {
                    v.push(base);
                }
                v.sort_unstable();
                v.dedup();
                v
            }
            None => (0..infra.len()).collect(),
        };
        if !(spec.slo_ms > 0.0) {
            return Err(Error::InvalidConfig(format!("slo_ms must be positive, got {}", spec.slo_ms)));
        }
        if spec.jitter_sigma < 0.0 {
            return Err(Error::InvalidConfig(format!("jitter_sigma must be non-negative, got {}", spec.jitter_sigma)));
        }
        if spec.forecaster.retrain_days <= 0 {
            return Err(Error::InvalidConfig("forecaster.retrain_days must be positive".into()));
        }
        spec.weights.validate()?;
        spec.pin.validate()?;
        spec.ga.validate()?;
        let start = parse_ts(&spec.horizon.start)?;
        let end = match &spec.horizon.end {
            Some(e) => parse_ts(e)?,
            None => traffic.end() + Duration::minutes(STEP_MINUTES),
        };
        if end <= start {
            return Err(Error::InvalidConfig(format!("empty horizon {} .. {}", fmt_ts(start), fmt_ts(end))));
        }
        let first = traffic.index_of(start)?;
        traffic.index_of(end - Duration::minutes(STEP_MINUTES))?;
        if first < LAGS + 1 {
            return Err(Error::InsufficientData { need: LAGS + 1, got: first });
        }
        let (c0, c1) = infra.carbon_coverage();
        if start < c0 || end > c1 {
            return Err(Error::OutOfRange(format!(
                "horizon {} .. {} not covered by carbon traces ({} .. {})",
                fmt_ts(start),
                fmt_ts(end),
                fmt_ts(c0),
                fmt_ts(c1)
            )));
        }
        for s in dag.services() {
            if !table.buckets()[0].per_ms.contains_key(&s.profile_key) {
                return Err(Error::MissingData(format!("profile for key '{}' (service {})", s.profile_key, s.id)));
            }
        }
        let schedule = activation_stages(&dag);
        Ok(Scenario { spec, dag, schedule, infra, traffic, table, base, allowed, start, end })
    }

    pub fn ticks(&self) -> usize {
        ((self.end - self.start).num_minutes() / STEP_MINUTES) as usize
    }
}
