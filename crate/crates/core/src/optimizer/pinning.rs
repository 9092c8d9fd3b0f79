//! Activation-order pinning.
//!
//! When the all-in-base latency already uses a large share of the SLO, late
//! activation stages are pinned to the base region: offloading them adds
//! round trips at the end of the request with little room left.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::app::{ActivationSchedule, AppDag};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PinPolicy {
    pub theta: f64,
    pub enabled: bool,
}

impl Default for PinPolicy {
    fn default() -> Self {
        PinPolicy { theta: 0.85, enabled: true }
    }
}

impl PinPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.enabled && !(0.8..=0.9).contains(&self.theta) {
            return Err(Error::InvalidConfig(format!("theta {} outside [0.8, 0.9]", self.theta)));
        }
        Ok(())
    }
}

/// Number of trailing stages to pin.
pub fn pinned_stage_count(stage_count: usize, base_latency: f64, slo: f64, policy: &PinPolicy) -> usize {
    if !policy.enabled || base_latency < policy.theta * slo {
        return 0;
    }
    let cap = stage_count.div_ceil(2);
    let mut pinned = 0;
    while pinned < cap && base_latency / slo >= policy.theta {
        pinned += 1;
    }
    pinned
}

/// Ids of services the optimizer may move.
pub fn pin_services(
    dag: &AppDag,
    schedule: &ActivationSchedule,
    base_latency: f64,
    slo: f64,
    policy: &PinPolicy,
) -> Result<BTreeSet<u32>> {
    if !(slo > 0.0) {
        return Err(Error::InvalidConfig(format!("slo {slo} must be positive")));
    }
    let s = schedule.stage_count();
    let last_movable_stage = s - pinned_stage_count(s, base_latency, slo, policy);
    Ok(dag
        .services()
        .iter()
        .filter(|m| !m.structurally_pinned && schedule.stage_of[&m.id] < last_movable_stage)
        .map(|m| m.id)
        .collect())
}
