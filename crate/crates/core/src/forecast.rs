//! Short-term traffic forecasting.
//!
//! A small gradient-boosted regression-tree model predicts the next 5-minute
//! sample from the 12 most recent ones (plus optional calendar features) and
//! is applied recursively to cover the next hour. The hourly load estimate is
//! the maximum of the 12 predicted values.

use std::path::Path;
use std::time::Instant;

use chrono::{DateTime, Datelike, Duration, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timefmt::{fmt_ts, parse_ts};

pub const LAGS: usize = 12;
pub const STEP_MINUTES: i64 = 5;

/// Request rate sampled every 5 minutes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficTrace {
    start: DateTime<Utc>,
    values: Vec<f64>,
}

impl TrafficTrace {
    pub fn new(start: DateTime<Utc>, values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Validation(format!("traffic value {v} is not a non-negative number")));
        }
        Ok(TrafficTrace { start, values })
    }

    pub fn from_samples(samples: &[(DateTime<Utc>, f64)]) -> Result<Self> {
        let Some(&(start, _)) = samples.first() else {
            return Err(Error::MissingData("empty traffic trace".into()));
        };
        for pair in samples.windows(2) {
            if pair[1].0 - pair[0].0 != Duration::minutes(STEP_MINUTES) {
                return Err(Error::Validation(format!(
                    "traffic trace is not on a 5-minute grid between {} and {}",
                    fmt_ts(pair[0].0),
                    fmt_ts(pair[1].0)
                )));
            }
        }
        Self::new(start, samples.iter().map(|s| s.1).collect())
    }

    /// Reads `timestamp,requests_per_sec`.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let ctx = || path.display().to_string();
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::parse(ctx(), e))?;
        let mut samples = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::parse(ctx(), e))?;
            if rec.len() < 2 {
                return Err(Error::parse(ctx(), "expected timestamp,requests_per_sec"));
            }
            let v: f64 = rec[1].trim().parse().map_err(|e| Error::parse(ctx(), format!("bad rate '{}': {e}", &rec[1])))?;
            samples.push((parse_ts(&rec[0])?, v));
        }
        Self::from_samples(&samples)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e: csv::Error| Error::parse(path.display().to_string(), e);
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(["timestamp", "requests_per_sec"]).map_err(io)?;
        for (i, v) in self.values.iter().enumerate() {
            w.write_record([fmt_ts(self.time_at(i)), v.to_string()]).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Azure Functions invocation-count files (one row per function, columns
    /// `1..=1440` holding per-minute counts for one day). Files are taken as
    /// consecutive days; counts are summed over functions and converted to
    /// 5-minute request rates.
    pub fn load_azure_invocations(paths: &[&Path], start: DateTime<Utc>) -> Result<Self> {
        let mut per_minute: Vec<f64> = Vec::new();
        for path in paths {
            let ctx = || path.display().to_string();
            let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::parse(ctx(), e))?;
            let headers = rdr.headers().map_err(|e| Error::parse(ctx(), e))?.clone();
            let minute_cols: Vec<usize> = (1..=1440)
                .map(|m| {
                    headers
                        .iter()
                        .position(|h| h.trim() == m.to_string())
                        .ok_or_else(|| Error::parse(ctx(), format!("missing minute column {m}")))
                })
                .collect::<Result<_>>()?;
            let mut day = vec![0.0; 1440];
            for rec in rdr.records() {
                let rec = rec.map_err(|e| Error::parse(ctx(), e))?;
                for (m, &c) in minute_cols.iter().enumerate() {
                    let field = rec.get(c).unwrap_or("0").trim();
                    day[m] += field.parse::<f64>().map_err(|e| Error::parse(ctx(), format!("bad count '{field}': {e}")))?;
                }
            }
            per_minute.extend(day);
        }
        let values = per_minute
            .chunks(STEP_MINUTES as usize)
            .map(|c| c.iter().sum::<f64>() / (60.0 * STEP_MINUTES as f64))
            .collect();
        Self::new(start, values)
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn end(&self) -> DateTime<Utc> {
        self.time_at(self.values.len())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time_at(&self, i: usize) -> DateTime<Utc> {
        self.start + Duration::minutes(STEP_MINUTES * i as i64)
    }

    /// Sample index of `t`, which must lie on the trace grid.
    pub fn index_of(&self, t: DateTime<Utc>) -> Result<usize> {
        let mins = (t - self.start).num_minutes();
        if t < self.start || t >= self.end() || (t - self.start).num_seconds() % (60 * STEP_MINUTES) != 0 {
            return Err(Error::OutOfRange(format!("{} (traffic trace)", fmt_ts(t))));
        }
        Ok((mins / STEP_MINUTES) as usize)
    }

    pub fn slice(&self, from: usize, to: usize) -> TrafficTrace {
        TrafficTrace { start: self.time_at(from), values: self.values[from..to].to_vec() }
    }
}

/// Inputs for one prediction step.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    /// Oldest first; the last entry is the most recent sample.
    pub lags: [f64; LAGS],
    pub tod_sin: f64,
    pub tod_cos: f64,
    pub dow: u32,
}

impl FeatureVector {
    /// `target` is the time of the value being predicted.
    pub fn new(lags: &[f64], target: DateTime<Utc>) -> Self {
        let mut l = [0.0; LAGS];
        l.copy_from_slice(&lags[lags.len() - LAGS..]);
        let minute = f64::from(target.hour() * 60 + target.minute());
        let angle = std::f64::consts::TAU * minute / 1440.0;
        FeatureVector { lags: l, tod_sin: angle.sin(), tod_cos: angle.cos(), dow: target.weekday().num_days_from_monday() }
    }

    fn write_into(&self, calendar: bool, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.lags);
        if calendar {
            out.extend_from_slice(&[self.tod_sin, self.tod_cos, f64::from(self.dow)]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub calendar_features: bool,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig { n_trees: 100, max_depth: 4, learning_rate: 0.1, min_samples_leaf: 5, calendar_features: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] < threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }
}

struct TreeBuilder<'a> {
    x: &'a [f64],
    dims: usize,
    y: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn build(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let n = idx.len();
        let sum: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let mean = sum / n as f64;
        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf(mean));
        if depth >= self.max_depth || n < 2 * self.min_leaf {
            return slot;
        }
        let parent_score = sum * sum / n as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        for f in 0..self.dims {
            idx.sort_by(|&a, &b| self.x[a * self.dims + f].total_cmp(&self.x[b * self.dims + f]).then(a.cmp(&b)));
            let mut left_sum = 0.0;
            for k in 0..n - 1 {
                left_sum += self.y[idx[k]];
                let nl = k + 1;
                let nr = n - nl;
                if nl < self.min_leaf {
                    continue;
                }
                if nr < self.min_leaf {
                    break;
                }
                let (a, b) = (self.x[idx[k] * self.dims + f], self.x[idx[k + 1] * self.dims + f]);
                if a == b {
                    continue;
                }
                let right_sum = sum - left_sum;
                let gain = left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64 - parent_score;
                if gain > best.map_or(1e-12, |b| b.0) {
                    best = Some((gain, f, 0.5 * (a + b)));
                }
            }
        }
        let Some((_, feature, threshold)) = best else { return slot };
        idx.sort_by(|&a, &b| self.x[a * self.dims + feature].total_cmp(&self.x[b * self.dims + feature]).then(a.cmp(&b)));
        let split = idx.partition_point(|&i| self.x[i * self.dims + feature] < threshold);
        let (l, r) = idx.split_at_mut(split);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[slot] = Node::Split { feature, threshold, left, right };
        slot
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub trees: Vec<RegressionTree>,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub n_trees: usize,
    pub base_prediction: f64,
    pub calendar_features: bool,
}

/// Training rows: one per target sample with a full lag window before it.
pub fn training_rows(trace: &TrafficTrace, calendar: bool) -> (Vec<f64>, usize, Vec<f64>) {
    let v = trace.values();
    let dims = LAGS + if calendar { 3 } else { 0 };
    let mut x = Vec::with_capacity(v.len().saturating_sub(LAGS) * dims);
    let mut y = Vec::with_capacity(v.len().saturating_sub(LAGS));
    for j in LAGS..v.len() {
        FeatureVector::new(&v[j - LAGS..j], trace.time_at(j)).write_into(calendar, &mut x);
        y.push(v[j]);
    }
    (x, dims, y)
}

impl GbdtModel {
    pub fn train(trace: &TrafficTrace, cfg: &GbdtConfig) -> Result<Self> {
        if trace.len() < LAGS + 1 {
            return Err(Error::InsufficientData { need: LAGS + 1, got: trace.len() });
        }
        if !(cfg.learning_rate > 0.0 && cfg.learning_rate <= 1.0) || cfg.min_samples_leaf == 0 {
            return Err(Error::InvalidConfig(format!("gbdt config {cfg:?}")));
        }
        let (x, dims, y) = training_rows(trace, cfg.calendar_features);
        let n = y.len();
        let base = y.iter().sum::<f64>() / n as f64;
        let mut pred = vec![base; n];
        let mut resid = vec![0.0; n];
        let mut trees = Vec::with_capacity(cfg.n_trees);
        let mut idx: Vec<usize> = (0..n).collect();
        for _ in 0..cfg.n_trees {
            for i in 0..n {
                resid[i] = y[i] - pred[i];
            }
            for (k, slot) in idx.iter_mut().enumerate() {
                *slot = k;
            }
            let mut b = TreeBuilder {
                x: &x,
                dims,
                y: &resid,
                max_depth: cfg.max_depth,
                min_leaf: cfg.min_samples_leaf,
                nodes: Vec::new(),
            };
            b.build(&mut idx, 0);
            let tree = RegressionTree { nodes: b.nodes };
            for i in 0..n {
                pred[i] += cfg.learning_rate * tree.predict(&x[i * dims..(i + 1) * dims]);
            }
            trees.push(tree);
        }
        Ok(GbdtModel {
            trees,
            learning_rate: cfg.learning_rate,
            max_depth: cfg.max_depth,
            n_trees: cfg.n_trees,
            base_prediction: base,
            calendar_features: cfg.calendar_features,
        })
    }

    pub fn predict_one(&self, features: &FeatureVector) -> f64 {
        let mut x = Vec::with_capacity(LAGS + 3);
        features.write_into(self.calendar_features, &mut x);
        self.predict_row(&x)
    }

    fn predict_row(&self, x: &[f64]) -> f64 {
        self.base_prediction + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    /// Recursive forecast of the 12 samples after `last`, the time of the
    /// newest history value.
    pub fn predict_window(&self, history: &[f64], last: DateTime<Utc>) -> Result<[f64; LAGS]> {
        if history.len() != LAGS {
            return Err(Error::WrongHistoryLength { expected: LAGS, got: history.len() });
        }
        let mut window: Vec<f64> = history.to_vec();
        let mut out = [0.0; LAGS];
        let mut x = Vec::with_capacity(LAGS + 3);
        for (k, slot) in out.iter_mut().enumerate() {
            let target = last + Duration::minutes(STEP_MINUTES * (k as i64 + 1));
            x.clear();
            FeatureVector::new(&window[k..], target).write_into(self.calendar_features, &mut x);
            let v = self.predict_row(&x).max(0.0);
            *slot = v;
            window.push(v);
        }
        Ok(out)
    }

    pub fn training_mse(&self, trace: &TrafficTrace) -> f64 {
        let (x, dims, y) = training_rows(trace, self.calendar_features);
        let sse: f64 = y.iter().enumerate().map(|(i, t)| (t - self.predict_row(&x[i * dims..(i + 1) * dims])).powi(2)).sum();
        sse / y.len() as f64
    }
}

/// Conservative hourly load estimate.
pub fn hour_estimate(window: &[f64]) -> f64 {
    window.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0)
}

pub fn naive_persistence(history: &[f64]) -> Result<[f64; LAGS]> {
    let last = *history.last().ok_or(Error::InsufficientData { need: 1, got: 0 })?;
    Ok([last; LAGS])
}

/// Mean of the most recent 12 samples, repeated.
pub fn lag_mean(history: &[f64]) -> Result<[f64; LAGS]> {
    if history.len() < LAGS {
        return Err(Error::InsufficientData { need: LAGS, got: history.len() });
    }
    let tail = &history[history.len() - LAGS..];
    Ok([tail.iter().sum::<f64>() / LAGS as f64; LAGS])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForecastModel {
    Gbdt,
    Persistence,
    LagMean,
}

impl ForecastModel {
    pub fn name(self) -> &'static str {
        match self {
            ForecastModel::Gbdt => "gbdt",
            ForecastModel::Persistence => "persistence",
            ForecastModel::LagMean => "lag-mean",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForecastEvalRow {
    pub model: String,
    pub mae: f64,
    pub mean_inference_ms: f64,
    pub windows: usize,
}

/// Held-out evaluation. The first `train_frac` of the trace trains the
/// model; forecasts are issued hourly over the rest and scored against the
/// following 12 samples.
pub fn evaluate(trace: &TrafficTrace, train_frac: f64, cfg: &GbdtConfig) -> Result<Vec<ForecastEvalRow>> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::InvalidConfig(format!("train fraction {train_frac} must be in (0, 1)")));
    }
    let split = ((trace.len() as f64) * train_frac).floor() as usize;
    let split = split.max(LAGS + 1);
    if split + LAGS > trace.len() {
        return Err(Error::InsufficientData { need: split + LAGS, got: trace.len() });
    }
    let model = GbdtModel::train(&trace.slice(0, split), cfg)?;
    let v = trace.values();
    let origins: Vec<usize> = (split..=v.len() - LAGS).step_by(LAGS).collect();

    let mut rows = Vec::new();
    for kind in [ForecastModel::Gbdt, ForecastModel::Persistence, ForecastModel::LagMean] {
        let mut abs_err = 0.0;
        let mut elapsed = 0.0;
        for &o in &origins {
            let hist = &v[o - LAGS..o];
            let started = Instant::now();
            let pred = match kind {
                ForecastModel::Gbdt => model.predict_window(hist, trace.time_at(o - 1))?,
                ForecastModel::Persistence => naive_persistence(hist)?,
                ForecastModel::LagMean => lag_mean(hist)?,
            };
            elapsed += started.elapsed().as_secs_f64();
            abs_err += pred.iter().zip(&v[o..o + LAGS]).map(|(p, t)| (p - t).abs()).sum::<f64>();
        }
        rows.push(ForecastEvalRow {
            model: kind.name().to_string(),
            mae: abs_err / (origins.len() * LAGS) as f64,
            mean_inference_ms: 1e3 * elapsed / origins.len() as f64,
            windows: origins.len(),
        });
    }
    Ok(rows)
}
