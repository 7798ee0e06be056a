//! Message and byte accounting, and the log-log fits used for complexity
//! sweeps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::message::Kind;
use crate::netsim::{Metrics, SimError};

use super::config::ScenarioConfig;
use super::run::run_seed;

/// Least-squares slope of ln(y) against ln(x). Points with a non-positive
/// coordinate are skipped.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Mean sends and bytes per round, per message kind.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub kind: Option<Kind>,
    pub messages: f64,
    pub bytes: f64,
}

/// Per-kind means over the rounds that appear in `m`, followed by a total
/// row with `kind = None`.
pub fn phase_table(m: &Metrics) -> Vec<PhaseRow> {
    let rounds = m.per_round.len().max(1) as f64;
    let mut rows: Vec<PhaseRow> = m
        .by_kind()
        .into_iter()
        .map(|(k, t)| PhaseRow { kind: Some(k), messages: t.count as f64 / rounds, bytes: t.bytes as f64 / rounds })
        .collect();
    let t = m.total();
    rows.push(PhaseRow { kind: None, messages: t.count as f64 / rounds, bytes: t.bytes as f64 / rounds });
    rows
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityPoint {
    pub n: usize,
    pub seeds: usize,
    /// Mean point-to-point sends per round.
    pub messages_per_round: f64,
    pub bytes_per_round: f64,
    pub by_kind: BTreeMap<Kind, (f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexitySweep {
    pub points: Vec<ComplexityPoint>,
    pub message_slope: Option<f64>,
    pub byte_slope: Option<f64>,
}

/// All-honest synchronous runs for each `n`, averaged over `seeds`.
pub fn complexity_sweep(ns: &[usize], rounds: u64, seeds: &[u64]) -> Result<ComplexitySweep, SimError> {
    let mut points = Vec::new();
    for &n in ns {
        let mut cfg = ScenarioConfig::honest(n);
        cfg.rounds = rounds;
        let sc = cfg.validate().expect("honest scenario is valid");
        let (mut msgs, mut bytes) = (0.0, 0.0);
        let mut by_kind: BTreeMap<Kind, (f64, f64)> = BTreeMap::new();
        for &seed in seeds {
            let m = run_seed(&sc, seed)?.metrics;
            let r = m.per_round.len().max(1) as f64;
            let t = m.total();
            msgs += t.count as f64 / r;
            bytes += t.bytes as f64 / r;
            for (k, t) in m.by_kind() {
                let e = by_kind.entry(k).or_default();
                e.0 += t.count as f64 / r;
                e.1 += t.bytes as f64 / r;
            }
        }
        let s = seeds.len().max(1) as f64;
        for v in by_kind.values_mut() {
            v.0 /= s;
            v.1 /= s;
        }
        points.push(ComplexityPoint {
            n,
            seeds: seeds.len(),
            messages_per_round: msgs / s,
            bytes_per_round: bytes / s,
            by_kind,
        });
    }
    let fit = |f: fn(&ComplexityPoint) -> f64| {
        loglog_slope(&points.iter().map(|p| (p.n as f64, f(p))).collect::<Vec<_>>())
    };
    Ok(ComplexitySweep {
        message_slope: fit(|p| p.messages_per_round),
        byte_slope: fit(|p| p.bytes_per_round),
        points,
    })
}
