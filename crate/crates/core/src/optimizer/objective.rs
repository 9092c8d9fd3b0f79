//! Weighted carbon + cost objective.
//!
//! Carbon (gCO2eq/h) and cost (USD/h) are made unit-free by dividing by their
//! all-in-base values, so the objective of the all-in-base placement equals
//! `w_carbon + w_cost` and weights keep their meaning across decisions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Weights {
    pub w_carbon: f64,
    pub w_cost: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights { w_carbon: 1.0, w_cost: 1.0 }
    }
}

impl Weights {
    pub fn validate(&self) -> Result<()> {
        for w in [self.w_carbon, self.w_cost] {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::InvalidConfig(format!("weight {w} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn is_degenerate(&self) -> bool {
        self.w_carbon == 0.0 && self.w_cost == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectiveValue {
    pub objective: f64,
    pub carbon_term: f64,
    pub cost_term: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub weights: Weights,
    pub carbon_ref: f64,
    pub cost_ref: f64,
}

fn normalized(x: f64, reference: f64) -> f64 {
    if reference > 0.0 {
        x / reference
    } else {
        x
    }
}

impl Objective {
    pub fn new(weights: Weights, carbon_ref: f64, cost_ref: f64) -> Self {
        Objective { weights, carbon_ref, cost_ref }
    }

    pub fn value(&self, carbon: f64, cost: f64) -> ObjectiveValue {
        let carbon_term = normalized(carbon, self.carbon_ref);
        let cost_term = normalized(cost, self.cost_ref);
        let mut objective = 0.0;
        if self.weights.w_carbon > 0.0 {
            objective += self.weights.w_carbon * carbon_term;
        }
        if self.weights.w_cost > 0.0 {
            objective += self.weights.w_cost * cost_term;
        }
        ObjectiveValue { objective, carbon_term, cost_term }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_zero() {
        let o = Objective::new(Weights { w_carbon: 0.0, w_cost: 0.0 }, 10.0, 2.0);
        assert_eq!(o.value(5.0, 1.0).objective, 0.0);
        assert_eq!(o.value(f64::MAX, 1e9).objective, 0.0);
    }

    #[test]
    fn base_relative_terms() {
        let o = Objective::new(Weights::default(), 200.0, 4.0);
        let v = o.value(100.0, 4.4);
        assert!((v.carbon_term - 0.5).abs() < 1e-12);
        assert!((v.cost_term - 1.1).abs() < 1e-12);
        assert!((v.objective - 1.6).abs() < 1e-12);
    }
}
