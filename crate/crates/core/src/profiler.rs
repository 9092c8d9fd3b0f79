//! Traffic-indexed workload profiles.
//!
//! Samples of per-service energy, latency and resource usage are split into
//! equal-frequency traffic buckets. Each bucket stores a conservative
//! representative per metric (mean plus one standard deviation, or the 85th
//! percentile) so that lookups at a given load are a binary search away.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timefmt::{fmt_ts, parse_ts};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ProfileMetrics {
    /// Joules per 5-minute interval.
    pub energy_j: f64,
    pub latency_ms: f64,
    pub cpu_cores: f64,
    pub mem_gb: f64,
    pub net_mbps: f64,
}

impl ProfileMetrics {
    const FIELDS: usize = 5;

    fn to_array(self) -> [f64; Self::FIELDS] {
        [self.energy_j, self.latency_ms, self.cpu_cores, self.mem_gb, self.net_mbps]
    }

    fn from_array(a: [f64; Self::FIELDS]) -> Self {
        ProfileMetrics { energy_j: a[0], latency_ms: a[1], cpu_cores: a[2], mem_gb: a[3], net_mbps: a[4] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSample {
    pub timestamp: DateTime<Utc>,
    /// Requests per second.
    pub traffic: f64,
    pub per_ms: BTreeMap<String, ProfileMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepresentativeMode {
    #[default]
    MeanPlusSigma,
    P85,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BucketConfig {
    pub n_min: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub mode: RepresentativeMode,
    pub window_days: i64,
    pub cap: usize,
}

impl Default for BucketConfig {
    fn default() -> Self {
        BucketConfig { n_min: 100, k_min: 3, k_max: 10, mode: RepresentativeMode::MeanPlusSigma, window_days: 7, cap: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bucket {
    /// Traffic range `[lo, hi)`; the last bucket also contains `hi`.
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub per_ms: BTreeMap<String, ProfileMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketTable {
    buckets: Vec<Bucket>,
    mode: RepresentativeMode,
    config: BucketConfig,
    samples: Vec<ProfileSample>,
    warnings: Vec<String>,
}

/// Number of equal-frequency buckets before merging.
pub fn initial_bucket_count(n: usize, cfg: &BucketConfig) -> usize {
    (n / cfg.n_min.max(1)).clamp(cfg.k_min, cfg.k_max).min(n).max(1)
}

/// Equal-frequency split of sorted traffic values. Returns bucket start
/// offsets; boundaries are pushed forward past runs of equal values so a
/// traffic level never straddles two buckets.
pub fn equal_frequency_starts(sorted: &[f64], k: usize) -> Vec<usize> {
    let n = sorted.len();
    let mut starts = vec![0];
    for i in 1..k {
        let mut idx = i * n / k;
        while idx < n && idx > 0 && sorted[idx] == sorted[idx - 1] {
            idx += 1;
        }
        if idx < n && idx > *starts.last().unwrap() {
            starts.push(idx);
        }
    }
    starts
}

/// Merges undersized groups left to right: the first group below `n_min`
/// is folded into its right neighbour, or into its left neighbour if it is
/// the last one. Input and output are group sizes.
pub fn merge_counts(mut counts: Vec<usize>, n_min: usize) -> Vec<usize> {
    while counts.len() > 1 {
        let Some(i) = counts.iter().position(|&c| c < n_min) else { break };
        if i + 1 < counts.len() {
            counts[i + 1] += counts[i];
        } else {
            counts[i - 1] += counts[i];
        }
        counts.remove(i);
    }
    counts
}

fn representative(values: &mut [f64], mode: RepresentativeMode) -> f64 {
    let n = values.len() as f64;
    match mode {
        RepresentativeMode::MeanPlusSigma => {
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            mean + var.sqrt()
        }
        RepresentativeMode::P85 => {
            values.sort_by(f64::total_cmp);
            let rank = (0.85 * n).ceil().max(1.0) as usize;
            values[rank - 1]
        }
    }
}

impl BucketTable {
    pub fn build(mut samples: Vec<ProfileSample>, cfg: BucketConfig) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySamples);
        }
        if cfg.n_min == 0 || cfg.k_min == 0 || cfg.k_max < cfg.k_min {
            return Err(Error::InvalidConfig(format!("bucket config {cfg:?}")));
        }
        let keys: BTreeSet<String> = samples[0].per_ms.keys().cloned().collect();
        for s in &samples {
            if !(s.traffic.is_finite() && s.traffic >= 0.0) {
                return Err(Error::Validation(format!("traffic {} at {}", s.traffic, fmt_ts(s.timestamp))));
            }
            if s.per_ms.len() != keys.len() || !s.per_ms.keys().all(|k| keys.contains(k)) {
                return Err(Error::Validation(format!("sample at {} covers a different service set", fmt_ts(s.timestamp))));
            }
            for (k, m) in &s.per_ms {
                if m.to_array().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::Validation(format!("negative metric for {k} at {}", fmt_ts(s.timestamp))));
                }
            }
        }
        samples.sort_by(|a, b| a.timestamp.cmp(&b.timestamp));

        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.sort_by(|&a, &b| samples[a].traffic.total_cmp(&samples[b].traffic).then(a.cmp(&b)));
        let traffic: Vec<f64> = order.iter().map(|&i| samples[i].traffic).collect();
        let n = traffic.len();

        let k = initial_bucket_count(n, &cfg);
        let starts = equal_frequency_starts(&traffic, k);
        let counts: Vec<usize> =
            starts.iter().enumerate().map(|(i, &s)| starts.get(i + 1).copied().unwrap_or(n) - s).collect();
        let merged = merge_counts(counts, cfg.n_min);

        let mut warnings = Vec::new();
        if n < cfg.n_min {
            warnings.push(format!("only {n} samples, fewer than the per-bucket minimum {}", cfg.n_min));
        }
        if merged.len() < cfg.k_min {
            warnings.push(format!(
                "{} bucket(s) after merging, fewer than the minimum {} ({n} samples)",
                merged.len(),
                cfg.k_min
            ));
        }
        for w in &warnings {
            log::warn!("profile table: {w}");
        }

        let key_list: Vec<String> = keys.into_iter().collect();
        let mut buckets = Vec::with_capacity(merged.len());
        let mut offset = 0;
        for (b, &count) in merged.iter().enumerate() {
            let members = &order[offset..offset + count];
            let lo = traffic[offset];
            let hi = if b + 1 < merged.len() { traffic[offset + count] } else { traffic[n - 1] };
            let mut per_ms = BTreeMap::new();
            let mut scratch = vec![0.0; count];
            for key in &key_list {
                let mut rep = [0.0; ProfileMetrics::FIELDS];
                for (f, slot) in rep.iter_mut().enumerate() {
                    for (dst, &i) in scratch.iter_mut().zip(members) {
                        *dst = samples[i].per_ms[key].to_array()[f];
                    }
                    *slot = representative(&mut scratch, cfg.mode);
                }
                per_ms.insert(key.clone(), ProfileMetrics::from_array(rep));
            }
            buckets.push(Bucket { lo, hi, count, per_ms });
            offset += count;
        }
        Ok(BucketTable { buckets, mode: cfg.mode, config: cfg, samples, warnings })
    }

    /// Table from explicit buckets with no backing samples.
    pub fn from_buckets(buckets: Vec<Bucket>, mode: RepresentativeMode) -> Result<Self> {
        if buckets.is_empty() {
            return Err(Error::EmptySamples);
        }
        for pair in buckets.windows(2) {
            if pair[0].hi != pair[1].lo || pair[0].lo >= pair[0].hi {
                return Err(Error::Validation("bucket ranges must be contiguous and increasing".into()));
            }
        }
        Ok(BucketTable {
            buckets,
            mode,
            config: BucketConfig { mode, ..BucketConfig::default() },
            samples: Vec::new(),
            warnings: Vec::new(),
        })
    }

    pub fn load_csv(path: &Path, cfg: BucketConfig) -> Result<Self> {
        Self::build(load_samples(path)?, cfg)
    }

    pub fn buckets(&self) -> &[Bucket] {
        &self.buckets
    }

    pub fn len(&self) -> usize {
        self.buckets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }

    pub fn mode(&self) -> RepresentativeMode {
        self.mode
    }

    pub fn config(&self) -> &BucketConfig {
        &self.config
    }

    pub fn samples(&self) -> &[ProfileSample] {
        &self.samples
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Index of the bucket containing `traffic`, saturating at both ends.
    pub fn bucket_index(&self, traffic: f64) -> usize {
        self.buckets[1..].partition_point(|b| b.lo <= traffic)
    }

    pub fn lookup(&self, traffic: f64) -> &BTreeMap<String, ProfileMetrics> {
        &self.buckets[self.bucket_index(traffic)].per_ms
    }

    /// Appends `new_samples`, forgets samples outside the trailing window and
    /// beyond the cap, and rebuilds. No new samples leaves the table as is.
    pub fn refresh(&self, new_samples: &[ProfileSample]) -> Result<Self> {
        if new_samples.is_empty() {
            return Ok(self.clone());
        }
        let mut all: Vec<ProfileSample> = self.samples.iter().chain(new_samples).cloned().collect();
        all.sort_by(|a, b| a.timestamp.cmp(&b.timestamp));
        let newest = all.last().expect("non-empty").timestamp;
        let cutoff = newest - Duration::days(self.config.window_days);
        all.retain(|s| s.timestamp > cutoff);
        if all.len() > self.config.cap {
            all.drain(..all.len() - self.config.cap);
        }
        Self::build(all, self.config)
    }
}

/// Reads `timestamp,traffic,profile_key,energy_j,latency_ms,cpu_cores,mem_gb,net_mbps`
/// rows, grouping rows with the same timestamp into one sample.
pub fn load_samples(path: &Path) -> Result<Vec<ProfileSample>> {
    let ctx = || path.display().to_string();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::parse(ctx(), e))?;
    let mut by_time: BTreeMap<DateTime<Utc>, ProfileSample> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::parse(ctx(), e))?;
        if rec.len() != 8 {
            return Err(Error::parse(ctx(), format!("expected 8 fields, got {}", rec.len())));
        }
        let ts = parse_ts(&rec[0])?;
        let num = |i: usize| -> Result<f64> {
            rec[i].trim().parse().map_err(|e| Error::parse(ctx(), format!("bad number '{}': {e}", &rec[i])))
        };
        let traffic = num(1)?;
        let metrics = ProfileMetrics {
            energy_j: num(3)?,
            latency_ms: num(4)?,
            cpu_cores: num(5)?,
            mem_gb: num(6)?,
            net_mbps: num(7)?,
        };
        let sample = by_time.entry(ts).or_insert_with(|| ProfileSample { timestamp: ts, traffic, per_ms: BTreeMap::new() });
        if sample.traffic != traffic {
            return Err(Error::Validation(format!("conflicting traffic values at {}", fmt_ts(ts))));
        }
        sample.per_ms.insert(rec[2].trim().to_string(), metrics);
    }
    Ok(by_time.into_values().collect())
}

pub fn write_samples(path: &Path, samples: &[ProfileSample]) -> Result<()> {
    let io = |e: csv::Error| Error::parse(path.display().to_string(), e);
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["timestamp", "traffic", "profile_key", "energy_j", "latency_ms", "cpu_cores", "mem_gb", "net_mbps"])
        .map_err(io)?;
    for s in samples {
        for (k, m) in &s.per_ms {
            w.write_record([
                fmt_ts(s.timestamp),
                s.traffic.to_string(),
                k.clone(),
                m.energy_j.to_string(),
                m.latency_ms.to_string(),
                m.cpu_cores.to_string(),
                m.mem_gb.to_string(),
                m.net_mbps.to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// A table that background refreshes can swap out while readers hold on
/// to the previous complete version.
#[derive(Debug)]
pub struct SharedTable {
    inner: RwLock<Arc<BucketTable>>,
}

impl SharedTable {
    pub fn new(table: BucketTable) -> Self {
        SharedTable { inner: RwLock::new(Arc::new(table)) }
    }

    pub fn current(&self) -> Arc<BucketTable> {
        self.inner.read().expect("table lock poisoned").clone()
    }

    pub fn replace(&self, table: BucketTable) {
        *self.inner.write().expect("table lock poisoned") = Arc::new(table);
    }

    pub fn refresh(&self, new_samples: &[ProfileSample]) -> Result<()> {
        let next = self.current().refresh(new_samples)?;
        self.replace(next);
        Ok(())
    }
}
