//! Re-optimization triggers.

/// Relative deviation that counts as a carbon-intensity shift.
pub const CARBON_THRESHOLD: f64 = 0.2;

/// Hourly samples in the trailing carbon trend.
pub const TREND_HOURS: usize = 6;

pub fn carbon_trigger(trend: f64, forecast: f64, threshold: f64) -> bool {
    if trend == 0.0 {
        return forecast > 0.0;
    }
    (forecast - trend).abs() / trend > threshold
}

pub fn workload_trigger(current_bucket: usize, forecast_bucket: usize) -> bool {
    current_bucket != forecast_bucket
}

pub fn trend(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}
