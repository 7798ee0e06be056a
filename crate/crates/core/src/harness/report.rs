//! Text and record renderings of a bundle.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::netsim::Metrics;
use crate::types::Role;

use super::metrics::{phase_table, ComplexitySweep};
use super::suite::Bundle;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Records,
    Table,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "records" | "jsonl" => Ok(Format::Records),
            "table" | "text" => Ok(Format::Table),
            _ => Err(format!("unknown format {s:?} (expected records or table)")),
        }
    }
}

/// Reference asymptotics next to which measured counts are shown.
pub const ASYMPTOTIC_NOTE: &str = "reference asymptotics: messages O(n^3), bytes O(kappa*n^4). \
Measured values count point-to-point sends (a broadcast is n-1 sends) per round, \
so direct-channel counts grow as n^2 and bytes as n^3; the extra factor of n in the \
reference figures is not reproduced by this accounting.";

pub fn emit_report(bundle: &Bundle, format: Format) -> String {
    match format {
        Format::Records => {
            let mut s = String::new();
            for r in bundle.records() {
                s.push_str(&serde_json::to_string(&r).expect("records serialize"));
                s.push('\n');
            }
            s
        }
        Format::Table => table(bundle),
    }
}

fn table(bundle: &Bundle) -> String {
    let mut s = String::new();
    let mut by_scenario: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in bundle.runs.iter().enumerate() {
        by_scenario.entry(r.scenario.as_str()).or_default().push(i);
    }
    let _ = writeln!(
        s,
        "{:<28} {:>5} {:>6} {:>6} {:>6} {:>8} {:>6} {:>7} {:>12}",
        "scenario", "runs", "robust", "cens", "safe", "finals", "trunc", "stashed", "states"
    );
    for (name, idx) in &by_scenario {
        let runs: Vec<_> = idx.iter().map(|i| &bundle.runs[*i]).collect();
        let count = |f: &dyn Fn(&&super::suite::RunSummary) -> bool| runs.iter().filter(|r| f(r)).count();
        let mut states: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &runs {
            *states.entry(r.state.label()).or_default() += 1;
        }
        let finals = runs.iter().map(|r| r.finalized_rounds).sum::<usize>() as f64 / runs.len() as f64;
        let states: Vec<String> = states.iter().map(|(k, v)| format!("{k}:{v}")).collect();
        let _ = writeln!(
            s,
            "{:<28} {:>5} {:>6} {:>6} {:>6} {:>8.1} {:>6} {:>7} {:>12}",
            name,
            runs.len(),
            count(&|r| r.robustness.robust()),
            count(&|r| r.robustness.censorship_resistance),
            count(&|r| r.safe()),
            finals,
            count(&|r| r.truncated),
            runs.iter().map(|r| r.stashed.len()).sum::<usize>(),
            states.join(" ")
        );
    }

    let _ = writeln!(s, "\nmean utility of non-honest players");
    for (name, idx) in &by_scenario {
        let mut per: BTreeMap<(u32, Role), (f64, usize)> = BTreeMap::new();
        for r in idx.iter().map(|i| &bundle.runs[*i]) {
            for (p, u) in &r.utilities {
                let role = r.roles[p];
                if role != Role::Honest {
                    let e = per.entry((p.0, role)).or_default();
                    e.0 += u;
                    e.1 += 1;
                }
            }
        }
        for ((p, role), (sum, c)) in per {
            let _ = writeln!(s, "  {name:<26} player {p:>3} {role:?}: {:.4}", sum / c as f64);
        }
    }

    let _ = writeln!(s, "\nper-round cost by message kind");
    for (name, idx) in &by_scenario {
        let mut m = Metrics::default();
        for r in idx.iter().map(|i| &bundle.runs[*i]) {
            for (round, kinds) in &r.metrics.per_round {
                let slot = m.per_round.entry(*round).or_default();
                for (k, t) in kinds {
                    let e = slot.entry(*k).or_default();
                    e.count += t.count;
                    e.bytes += t.bytes;
                }
            }
        }
        let runs = idx.len() as f64;
        let _ = writeln!(s, "  {name}");
        for row in phase_table(&m) {
            let label = row.kind.map_or("total".to_string(), |k| format!("{k:?}"));
            let _ = writeln!(s, "    {label:<12} {:>12.1} msgs {:>14.1} bytes", row.messages / runs, row.bytes / runs);
        }
    }
    let _ = writeln!(s, "\n{ASYMPTOTIC_NOTE}");
    s
}

pub fn sweep_table(sweep: &ComplexitySweep) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:>4} {:>14} {:>16} {:>12} {:>14}", "n", "msgs/round", "bytes/round", "n^3", "kappa*n^4");
    for p in &sweep.points {
        let n = p.n as f64;
        let _ = writeln!(
            s,
            "{:>4} {:>14.1} {:>16.1} {:>12.0} {:>14.0}",
            p.n,
            p.messages_per_round,
            p.bytes_per_round,
            n.powi(3),
            64.0 * n.powi(4)
        );
    }
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3}"));
    let _ = writeln!(s, "message slope {}  byte slope {}", fmt(sweep.message_slope), fmt(sweep.byte_slope));
    let _ = writeln!(s, "{ASYMPTOTIC_NOTE}");
    s
}
