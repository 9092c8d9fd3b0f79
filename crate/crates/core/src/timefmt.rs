//! Timestamp parsing and formatting shared by the trace loaders.

use chrono::{DateTime, NaiveDateTime, Utc};

use crate::error::{Error, Result};

/// Accepts RFC 3339 (`2023-08-01T10:00:00Z`) or naive UTC
/// (`2023-08-01T10:00:00`, `2023-08-01 10:00:00`).
pub fn parse_ts(s: &str) -> Result<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t.and_utc());
        }
    }
    Err(Error::parse("timestamp", format!("malformed timestamp '{s}'")))
}

pub fn fmt_ts(t: DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_common_forms() {
        let a = parse_ts("2023-08-01T10:00:00Z").unwrap();
        assert_eq!(parse_ts("2023-08-01 10:00:00").unwrap(), a);
        assert_eq!(parse_ts("2023-08-01T10:00").unwrap(), a);
        assert_eq!(fmt_ts(a), "2023-08-01T10:00:00Z");
        assert!(parse_ts("yesterday").is_err());
    }
}
