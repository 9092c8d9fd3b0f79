//! Shared inputs for the benchmarks.

use chrono::{TimeZone, Utc};
use geoplace_core::gen::{generate_traffic, TrafficGen};
use geoplace_core::TrafficTrace;

/// Default diurnal-plus-bursts traffic, 5-minute samples.
pub fn traffic(days: usize, seed: u64) -> TrafficTrace {
    let start = Utc.with_ymd_and_hms(2023, 8, 1, 0, 0, 0).unwrap();
    generate_traffic(&TrafficGen::default(), start, days * 288, seed).expect("valid generator").0
}
