//! Runs scenarios across their seeds and collects flat records.
//!
//! Runs execute in parallel; results come back in (scenario, seed) order
//! so the bundle is identical regardless of thread count.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gametheory::{classify_state, stash_rounds, utilities};
use crate::netsim::{Metrics, SimError};
use crate::trace::RunTrace;
use crate::types::{PlayerId, Role, SystemState};

use super::config::Scenario;
use super::robustness::{check_robustness, RobustnessReport};
use super::run::run_seed;

/// One output line: every record names its scenario, config hash and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
    pub metric: String,
    pub value: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
    pub trace_hash: String,
    pub truncated: bool,
    pub state: SystemState,
    pub finalized_rounds: usize,
    pub robustness: RobustnessReport,
    pub stashed: BTreeMap<PlayerId, u64>,
    /// Stashed players whose role is honest.
    pub false_accusations: Vec<PlayerId>,
    pub utilities: BTreeMap<PlayerId, f64>,
    pub roles: BTreeMap<PlayerId, Role>,
    pub metrics: Metrics,
}

impl RunSummary {
    /// Safety held: agreement, ordering and no honest player stashed.
    pub fn safe(&self) -> bool {
        self.robustness.agreement && self.robustness.ordering && self.false_accusations.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub runs: Vec<RunSummary>,
}

impl Bundle {
    pub fn records(&self) -> Vec<Record> {
        let mut out = Vec::new();
        for r in &self.runs {
            let mut push = |metric: &str, value: serde_json::Value| {
                out.push(Record {
                    scenario: r.scenario.clone(),
                    config_hash: r.config_hash.clone(),
                    seed: r.seed,
                    metric: metric.into(),
                    value,
                })
            };
            let rb = &r.robustness;
            let total = r.metrics.total();
            push("trace_hash", r.trace_hash.clone().into());
            push("truncated", r.truncated.into());
            push("state", r.state.label().into());
            push("finalized_rounds", r.finalized_rounds.into());
            push("validity", rb.validity.into());
            push("agreement", rb.agreement.into());
            push("ordering", rb.ordering.into());
            push("liveness", rb.liveness.into());
            push("censorship_resistance", rb.censorship_resistance.into());
            push("messages", total.count.into());
            push("bytes", total.bytes.into());
            push("stashed", r.stashed.keys().map(|p| p.0).collect::<Vec<_>>().into());
            push("false_accusations", r.false_accusations.len().into());
            for (p, u) in &r.utilities {
                if r.roles.get(p) != Some(&Role::Honest) {
                    push(&format!("utility.{}", p.0), (*u).into());
                }
            }
        }
        out
    }

    pub fn all_safe(&self) -> bool {
        self.runs.iter().all(RunSummary::safe)
    }
}

#[derive(Debug, Error)]
#[error("scenario {scenario} seed {seed}: {source}")]
pub struct SuiteError {
    pub scenario: String,
    pub seed: u64,
    pub source: SimError,
}

pub fn summarize(sc: &Scenario, trace: &RunTrace, metrics: Metrics) -> RunSummary {
    let robustness = check_robustness(trace, 0, sc.config.cr_window);
    let stashed = stash_rounds(trace);
    let roles: BTreeMap<PlayerId, Role> = trace.header.players.iter().map(|p| (p.id, p.role)).collect();
    let false_accusations = stashed.keys().filter(|p| roles.get(p) == Some(&Role::Honest)).copied().collect();
    RunSummary {
        scenario: sc.name().to_string(),
        config_hash: sc.hash.clone(),
        seed: trace.header.seed,
        trace_hash: trace.hash(),
        truncated: trace.footer.truncated,
        state: classify_state(trace).state,
        finalized_rounds: crate::gametheory::honest_finals(trace).len(),
        robustness,
        stashed,
        false_accusations,
        utilities: utilities(trace, &sc.config.utility),
        roles,
        metrics,
    }
}

/// Runs every (scenario, seed) pair. Traces are handed to `keep` before
/// they are dropped, in completion order.
pub fn run_suite_with<F>(scenarios: &[Scenario], keep: F) -> Result<Bundle, SuiteError>
where
    F: Fn(&Scenario, &RunTrace) + Sync,
{
    let jobs: Vec<(&Scenario, u64)> = scenarios.iter().flat_map(|s| s.seeds.iter().map(move |&x| (s, x))).collect();
    let runs = jobs
        .par_iter()
        .map(|(sc, seed)| {
            let res = run_seed(sc, *seed).map_err(|e| SuiteError {
                scenario: sc.name().to_string(),
                seed: *seed,
                source: e,
            })?;
            keep(sc, &res.trace);
            Ok(summarize(sc, &res.trace, res.metrics))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Bundle { runs })
}

pub fn run_suite(scenarios: &[Scenario]) -> Result<Bundle, SuiteError> {
    run_suite_with(scenarios, |_, _| {})
}
