//! Robustness verdicts recomputed from a trace alone.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::engine::EngineEvent;
use crate::message::Kind;
use crate::trace::{Event, RunTrace};
use crate::types::{leader_of, Digest, PlayerId, Round};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub clause: String,
    pub round: Option<Round>,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub validity: bool,
    pub agreement: bool,
    pub ordering: bool,
    pub liveness: bool,
    pub censorship_resistance: bool,
    /// Liveness and censorship verdicts were taken on a truncated trace.
    pub provisional: bool,
    pub details: Vec<Violation>,
}

impl RobustnessReport {
    pub fn robust(&self) -> bool {
        self.validity && self.agreement && self.ordering && self.liveness
    }

    pub fn all_pass(&self) -> bool {
        self.robust() && self.censorship_resistance
    }
}

/// Each honest player's final chain, ordered by round slot.
pub fn honest_chains(trace: &RunTrace) -> BTreeMap<PlayerId, Vec<(Round, Digest)>> {
    let mut chains: BTreeMap<PlayerId, BTreeMap<Round, Digest>> =
        trace.header.honest().into_iter().map(|p| (p, BTreeMap::new())).collect();
    for (_, p, e) in trace.honest_engine_events() {
        if let EngineEvent::Finalize { round, digest, .. } = e {
            chains.entry(p).or_default().entry(*round).or_insert(*digest);
        }
    }
    chains.into_iter().map(|(p, c)| (p, c.into_iter().collect())).collect()
}

pub fn check_robustness(trace: &RunTrace, c: usize, cr_window: usize) -> RobustnessReport {
    let h = &trace.header;
    let n = h.n;
    let honest: BTreeSet<PlayerId> = h.honest().into_iter().collect();
    let chains = honest_chains(trace);
    let mut details = Vec::new();
    let mut fail = |clause: &str, round: Option<Round>, detail: String| {
        details.push(Violation { clause: clause.into(), round, detail });
    };

    // Agreement: one digest per slot, and per height of the final chains.
    let mut slots: BTreeMap<Round, BTreeSet<Digest>> = BTreeMap::new();
    for chain in chains.values() {
        for (r, d) in chain {
            slots.entry(*r).or_default().insert(*d);
        }
    }
    let mut agreement = true;
    for (r, ds) in &slots {
        if ds.len() > 1 {
            agreement = false;
            fail("agreement", Some(*r), format!("{} different final blocks", ds.len()));
        }
    }
    let list: Vec<&Vec<(Round, Digest)>> = chains.values().collect();
    for (i, a) in list.iter().enumerate() {
        for b in &list[i + 1..] {
            if let Some(hgt) = a.iter().zip(b.iter()).position(|(x, y)| x.1 != y.1) {
                if agreement {
                    fail("agreement", Some(a[hgt].0), format!("height {hgt} differs"));
                }
                agreement = false;
            }
        }
    }

    // c-strict ordering: with the last c blocks cut, one chain prefixes the other.
    let mut ordering = true;
    for (i, a) in list.iter().enumerate() {
        for b in &list[i + 1..] {
            let a = &a[..a.len().saturating_sub(c)];
            let b = &b[..b.len().saturating_sub(c)];
            let m = a.len().min(b.len());
            if a[..m] != b[..m] {
                ordering = false;
            }
        }
    }
    if !ordering {
        fail("ordering", None, format!("chains diverge below the last {c} blocks"));
    }

    // Liveness: whatever one honest player finalized, all of them did.
    let mut liveness = true;
    for (r, ds) in &slots {
        for (p, chain) in &chains {
            if !chain.iter().any(|(cr, cd)| cr == r && ds.contains(cd)) {
                liveness = false;
                fail("liveness", Some(*r), format!("player {} never finalized", p.0));
            }
        }
    }

    // Validity on honest-leader rounds: nothing but the leader's proposal.
    let mut proposals: BTreeMap<Round, BTreeSet<Digest>> = BTreeMap::new();
    for e in &trace.events {
        if let Event::Send { from, kind: Kind::Propose, round, digest: Some(d), .. } = &e.event {
            if *from == leader_of(*round, n) {
                proposals.entry(*round).or_default().insert(*d);
            }
        }
    }
    let mut validity = true;
    for (r, ds) in &slots {
        if !honest.contains(&leader_of(*r, n)) {
            continue;
        }
        let proposed = proposals.get(r).cloned().unwrap_or_default();
        if ds.iter().any(|d| !proposed.contains(d)) {
            validity = false;
            fail("validity", Some(*r), "final block was not the honest leader's proposal".into());
        }
    }

    // Censorship: each transaction reaches every honest chain within
    // n * cr_window rounds of becoming available.
    let window = (n * cr_window) as Round;
    let mut included: BTreeMap<PlayerId, BTreeMap<u64, Round>> = BTreeMap::new();
    for (_, p, e) in trace.honest_engine_events() {
        if let EngineEvent::Finalize { round, txs, .. } = e {
            let m = included.entry(p).or_default();
            for t in txs {
                let slot = m.entry(*t).or_insert(*round);
                *slot = (*slot).min(*round);
            }
        }
    }
    let mut censorship = true;
    for t in &h.txs {
        let deadline = t.round + window;
        if deadline > h.max_rounds {
            continue;
        }
        for p in &honest {
            let ok = included.get(p).and_then(|m| m.get(&t.tx.id)).is_some_and(|r| *r < deadline);
            if !ok {
                censorship = false;
                fail("censorship", Some(t.round), format!("tx {} missing at player {}", t.tx.id, p.0));
            }
        }
    }

    RobustnessReport {
        validity,
        agreement,
        ordering,
        liveness,
        censorship_resistance: censorship,
        provisional: trace.footer.truncated,
        details,
    }
}
