//! Scenario loading, run orchestration, artifact export and cost reports.

pub mod cost;
pub mod run;
pub mod scenario;

use std::path::Path;

use padsim_core::digest::DigestComparison;

pub use run::{execute, run_scenario, Executed, HarnessError};
pub use scenario::{Protocol, Scenario};

/// Compares the digests saved in two run directories.
pub fn compare_runs(a: &Path, b: &Path) -> Result<DigestComparison, HarnessError> {
    Ok(run::read_digest(a)?.compare(&run::read_digest(b)?))
}

pub fn describe(c: &DigestComparison) -> String {
    match c {
        DigestComparison::Equal => "equal".into(),
        DigestComparison::Diverged { step, entity: Some(e) } => format!("diverged at step {step}, entity {}", e.0),
        DigestComparison::Diverged { step, entity: None } => format!("diverged at step {step}"),
        DigestComparison::Incompatible(why) => format!("incompatible: {why}"),
    }
}

/// Prices a finished run. `rates` maps node names from the run's `cost.json`
/// to prices per hour; the name `*` sets every node not listed otherwise.
pub fn cost_of_run(run: &Path, rates: &[String], hour_rounding: bool) -> Result<cost::CostReport, HarnessError> {
    let path = run.join(run::COST);
    let text = std::fs::read_to_string(&path).map_err(run::io_err(&path))?;
    let input: run::CostInput = serde_json::from_str(&text)
        .map_err(|e| HarnessError::Artifact { path: path.clone(), message: e.to_string() })?;
    let mut given = std::collections::BTreeMap::new();
    for r in rates {
        let bad = || HarnessError::Artifact {
            path: path.clone(),
            message: format!("rate {r:?} must look like <node>=<price>"),
        };
        let (node, price) = r.split_once('=').ok_or_else(bad)?;
        let price: f64 = price.trim().parse().map_err(|_| bad())?;
        let node = node.trim();
        if node != "*" && !input.nodes.iter().any(|n| n == node) {
            return Err(HarnessError::Artifact {
                path: path.clone(),
                message: format!("node {node} did not take part in the run (nodes: {})", input.nodes.join(", ")),
            });
        }
        given.insert(node.to_string(), price);
    }
    let mut priced = Vec::new();
    for n in &input.nodes {
        match given.get(n).or_else(|| given.get("*")) {
            Some(&p) => priced.push((n.clone(), p)),
            None => {
                return Err(HarnessError::Artifact {
                    path: path.clone(),
                    message: format!("no rate given for node {n}"),
                })
            }
        }
    }
    Ok(cost::cost_report(input.wct_s, &priced, hour_rounding, input.steps)?)
}
