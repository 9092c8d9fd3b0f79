//! Run records and their on-disk forms.
//!
//! `metrics.csv`, `events.jsonl` and `summary.json` depend only on the inputs
//! and the seed. Solver wall-clock times go to `timing.json`.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infra::{fmt_num, write_json};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TickRecord {
    pub tick: usize,
    pub time: String,
    /// Observed req/s.
    pub traffic: f64,
    pub bucket: usize,
    pub carbon_g: f64,
    pub cost_usd: f64,
    /// Model latency of the live placement.
    pub latency_ms: f64,
    /// Mean over jittered draws.
    pub mean_latency_ms: f64,
    pub violation_rate: f64,
    pub migrating: bool,
    /// Services per region, in infra order.
    pub region_counts: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// First placement, applied at tick 0.
    Initial,
    /// Re-optimization after one or more triggers.
    Decision,
    /// A pending placement went live.
    Applied,
    /// No feasible placement was found; everything moved back to base.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub tick: usize,
    pub time: String,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub triggers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traffic_estimate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bucket: Option<usize>,
    /// Whether the decision differs from the live placement.
    #[serde(default)]
    pub changed: bool,
    /// Services whose region differs from the live placement.
    #[serde(default)]
    pub moved: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub apply_tick: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    #[serde(default)]
    pub evaluations: usize,
    #[serde(default)]
    pub search_space_log10: f64,
    #[serde(default)]
    pub movable: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placement: Option<BTreeMap<String, usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl Event {
    pub fn new(tick: usize, time: String, kind: EventKind) -> Self {
        Event {
            tick,
            time,
            kind,
            triggers: Vec::new(),
            traffic_estimate: None,
            bucket: None,
            changed: false,
            moved: 0,
            apply_tick: None,
            objective: None,
            evaluations: 0,
            search_space_log10: 0.0,
            movable: 0,
            placement: None,
            message: None,
        }
    }

    pub fn is_triggered(&self) -> bool {
        self.kind == EventKind::Decision
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub tick: usize,
    pub solve_time_s: f64,
}

/// Stability of the placement over a run, derived from the event log alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stability {
    pub triggers: usize,
    pub carbon_triggers: usize,
    pub workload_triggers: usize,
    /// Triggered decisions that changed the placement.
    pub changes: usize,
    /// `changes / triggers`; undefined without triggers.
    pub adaptation_rate: Option<f64>,
    pub changes_per_day: f64,
    /// Mean fraction of non-structural services moved per change.
    pub avg_ms_moved_frac: f64,
}

/// Stability figures from decision events. `unpinned` is the number of
/// non-structural services and `days` the horizon length.
pub fn stability_summary(events: &[Event], unpinned: usize, days: f64) -> Stability {
    let decisions: Vec<&Event> = events.iter().filter(|e| e.is_triggered()).collect();
    let has = |e: &Event, t: &str| e.triggers.iter().any(|x| x == t);
    let changed: Vec<&&Event> = decisions.iter().filter(|e| e.changed).collect();
    let moved_frac = if changed.is_empty() || unpinned == 0 {
        0.0
    } else {
        changed.iter().map(|e| e.moved as f64 / unpinned as f64).sum::<f64>() / changed.len() as f64
    };
    Stability {
        triggers: decisions.len(),
        carbon_triggers: decisions.iter().filter(|e| has(e, "carbon")).count(),
        workload_triggers: decisions.iter().filter(|e| has(e, "workload")).count(),
        changes: changed.len(),
        adaptation_rate: (!decisions.is_empty()).then(|| changed.len() as f64 / decisions.len() as f64),
        changes_per_day: if days > 0.0 { changed.len() as f64 / days } else { 0.0 },
        avg_ms_moved_frac: moved_frac,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub strategy: String,
    pub forecaster: String,
    pub seed: u64,
    pub ticks: usize,
    pub days: f64,
    pub carbon_kg: f64,
    pub cost_usd: f64,
    pub mean_latency_ms: f64,
    pub max_latency_ms: f64,
    /// Mean over ticks of the per-tick violation rate.
    pub violation_rate: f64,
    pub max_violation_rate: f64,
    pub decisions: usize,
    pub fallbacks: usize,
    pub evaluations: usize,
    pub mean_search_space_log10: f64,
    pub stability: Stability,
}

pub fn summarize(
    scenario: &str,
    strategy: &str,
    forecaster: &str,
    seed: u64,
    ticks: &[TickRecord],
    events: &[Event],
    unpinned: usize,
) -> Summary {
    let n = ticks.len().max(1) as f64;
    let days = ticks.len() as f64 / 288.0;
    let decided: Vec<&Event> = events.iter().filter(|e| matches!(e.kind, EventKind::Initial | EventKind::Decision)).collect();
    Summary {
        scenario: scenario.to_string(),
        strategy: strategy.to_string(),
        forecaster: forecaster.to_string(),
        seed,
        ticks: ticks.len(),
        days,
        carbon_kg: ticks.iter().map(|t| t.carbon_g).sum::<f64>() / 1000.0,
        cost_usd: ticks.iter().map(|t| t.cost_usd).sum(),
        mean_latency_ms: ticks.iter().map(|t| t.mean_latency_ms).sum::<f64>() / n,
        max_latency_ms: ticks.iter().map(|t| t.latency_ms).fold(0.0, f64::max),
        violation_rate: ticks.iter().map(|t| t.violation_rate).sum::<f64>() / n,
        max_violation_rate: ticks.iter().map(|t| t.violation_rate).fold(0.0, f64::max),
        decisions: decided.len(),
        fallbacks: events.iter().filter(|e| e.kind == EventKind::Fallback).count(),
        evaluations: decided.iter().map(|e| e.evaluations).sum(),
        mean_search_space_log10: if decided.is_empty() {
            0.0
        } else {
            decided.iter().map(|e| e.search_space_log10).sum::<f64>() / decided.len() as f64
        },
        stability: stability_summary(events, unpinned, days),
    }
}

pub fn write_metrics_csv(path: &Path, region_ids: &[String], ticks: &[TickRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path.display().to_string(), e))?;
    let mut header: Vec<String> =
        ["tick", "time", "traffic", "bucket", "carbon_g", "cost_usd", "latency_ms", "mean_latency_ms", "violation_rate", "migrating"]
            .iter()
            .map(|s| s.to_string())
            .collect();
    header.extend(region_ids.iter().map(|id| format!("n_{id}")));
    w.write_record(&header).map_err(|e| Error::parse(path.display().to_string(), e))?;
    for t in ticks {
        let mut row = vec![
            t.tick.to_string(),
            t.time.clone(),
            fmt_num(t.traffic),
            t.bucket.to_string(),
            fmt_num(t.carbon_g),
            fmt_num(t.cost_usd),
            fmt_num(t.latency_ms),
            fmt_num(t.mean_latency_ms),
            fmt_num(t.violation_rate),
            u8::from(t.migrating).to_string(),
        ];
        row.extend(t.region_counts.iter().map(|c| c.to_string()));
        w.write_record(&row).map_err(|e| Error::parse(path.display().to_string(), e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_events(path: &Path, events: &[Event]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for e in events {
        let line = serde_json::to_string(e).map_err(|err| Error::parse("event", err))?;
        writeln!(f, "{line}").map_err(|err| Error::io(path, err))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn read_events(path: &Path) -> Result<Vec<Event>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(f)
        .lines()
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|l| {
            let l = l.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&l).map_err(|e| Error::parse(path.display().to_string(), e))
        })
        .collect()
}

pub fn write_summary(path: &Path, summary: &Summary) -> Result<()> {
    write_json(path, summary)
}

pub fn write_timing(path: &Path, timing: &[TimingRecord]) -> Result<()> {
    let total: f64 = timing.iter().map(|t| t.solve_time_s).sum();
    let max = timing.iter().map(|t| t.solve_time_s).fold(0.0, f64::max);
    let v = serde_json::json!({
        "decisions": timing.len(),
        "total_solve_time_s": total,
        "mean_solve_time_s": if timing.is_empty() { 0.0 } else { total / timing.len() as f64 },
        "max_solve_time_s": max,
        "per_decision": timing,
    });
    write_json(path, &v)
}
