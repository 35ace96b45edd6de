//! Monetary cost of a run under per-node hourly prices.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("a cost report needs at least one node")]
    NoNodes,
    #[error("negative rate {rate} for node {node}")]
    NegativeRate { node: String, rate: f64 },
    #[error("wall clock time must be positive, got {0} s")]
    Wct(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeCost {
    pub node: String,
    pub rate_per_hour: f64,
    pub billed_hours: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub wct_s: f64,
    pub hour_rounding: bool,
    pub nodes: Vec<NodeCost>,
    pub total_cost: f64,
    pub steps: u64,
    /// Cost per simulated step.
    pub cost_per_step: f64,
}

/// Every node is billed for the whole run; with `hour_rounding` each partial
/// hour counts as a full one.
pub fn cost_report(
    wct_s: f64,
    rates: &[(String, f64)],
    hour_rounding: bool,
    steps: u64,
) -> Result<CostReport, CostError> {
    if rates.is_empty() {
        return Err(CostError::NoNodes);
    }
    if wct_s.is_nan() || wct_s <= 0.0 {
        return Err(CostError::Wct(wct_s));
    }
    let hours = if hour_rounding { (wct_s / 3600.0).ceil() } else { wct_s / 3600.0 };
    let mut nodes = Vec::with_capacity(rates.len());
    for (node, rate) in rates {
        if *rate < 0.0 || rate.is_nan() {
            return Err(CostError::NegativeRate { node: node.clone(), rate: *rate });
        }
        nodes.push(NodeCost { node: node.clone(), rate_per_hour: *rate, billed_hours: hours, cost: rate * hours });
    }
    let total_cost = nodes.iter().map(|n| n.cost).sum();
    let cost_per_step = if steps > 0 { total_cost / steps as f64 } else { 0.0 };
    Ok(CostReport { wct_s, hour_rounding, nodes, total_cost, steps, cost_per_step })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three(rate: f64) -> Vec<(String, f64)> {
        (0..3).map(|i| (i.to_string(), rate)).collect()
    }

    #[test]
    fn rounding_bills_whole_hours() {
        let r = cost_report(1800.0, &three(0.10), true, 1000).unwrap();
        assert!((r.total_cost - 0.30).abs() < 1e-12);
        let r = cost_report(1800.0, &three(0.10), false, 1000).unwrap();
        assert!((r.total_cost - 0.15).abs() < 1e-12);
    }

    #[test]
    fn rounding_never_lowers_cost() {
        for wct in [1.0, 3599.0, 3600.0, 3601.0, 7200.5] {
            let up = cost_report(wct, &three(0.3), true, 10).unwrap().total_cost;
            let exact = cost_report(wct, &three(0.3), false, 10).unwrap().total_cost;
            assert!(up >= exact);
        }
    }

    #[test]
    fn degenerate_inputs_fail() {
        assert_eq!(cost_report(10.0, &[], true, 1), Err(CostError::NoNodes));
        assert!(matches!(cost_report(10.0, &[("a".into(), -1.0)], true, 1), Err(CostError::NegativeRate { .. })));
        assert_eq!(cost_report(0.0, &three(1.0), true, 1), Err(CostError::Wct(0.0)));
    }
}
