//! Seeded discrete-event network.
//!
//! Channels are reliable and authenticated: every message sent reaches every
//! addressee exactly once, after a finite delay drawn from the delay model
//! and stretched by any partition in force at send time. Events at equal
//! times are ordered by insertion sequence, so a run is a pure function of
//! its inputs and seed.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{Controller, Outgoing, Target};
use crate::crypto::Registry;
use crate::engine::{Action, Output, Replica};
use crate::message::{Attestation, Kind, Message};
use crate::trace::{Event, RunTrace, TraceEvent, TraceFooter, TraceHeader};
use crate::types::{PlayerId, Round, Tick};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum DelayModel {
    /// Delays uniform in `[1, bound]`.
    Synchronous { bound: Tick },
    /// Sends before `gst` take up to `pre_gst_max`, later ones up to
    /// `post_bound`.
    PartiallySynchronous { gst: Tick, pre_gst_max: Tick, post_bound: Tick },
    /// Finite delays up to `max`, with no bound known to the protocol.
    Asynchronous { max: Tick },
}

impl DelayModel {
    pub fn gst(&self) -> Option<Tick> {
        match self {
            DelayModel::PartiallySynchronous { gst, .. } => Some(*gst),
            _ => None,
        }
    }

    /// Largest delay a message sent at or after GST can take.
    pub fn settled_bound(&self) -> Tick {
        match self {
            DelayModel::Synchronous { bound } => *bound,
            DelayModel::PartiallySynchronous { post_bound, .. } => *post_bound,
            DelayModel::Asynchronous { max } => *max,
        }
    }

    fn sample(&self, now: Tick, rng: &mut ChaCha8Rng) -> Tick {
        let hi = match self {
            DelayModel::Synchronous { bound } => *bound,
            DelayModel::PartiallySynchronous { gst, pre_gst_max, post_bound } => {
                if now < *gst {
                    *pre_gst_max
                } else {
                    *post_bound
                }
            }
            DelayModel::Asynchronous { max } => *max,
        };
        rng.gen_range(1..=hi.max(1))
    }
}

/// Players in different groups cannot reach each other during
/// `[start, end)`; such messages arrive at `end` at the earliest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionInterval {
    pub start: Tick,
    pub end: Tick,
    pub groups: Vec<Vec<PlayerId>>,
}

impl PartitionInterval {
    fn group_of(&self, p: PlayerId) -> Option<usize> {
        self.groups.iter().position(|g| g.contains(&p))
    }

    fn separates(&self, at: Tick, a: PlayerId, b: PlayerId) -> bool {
        if at < self.start || at >= self.end {
            return false;
        }
        matches!((self.group_of(a), self.group_of(b)), (Some(x), Some(y)) if x != y)
    }
}

/// Applies the partition rule to a normal delivery time.
pub fn partitioned_arrival(parts: &[PartitionInterval], sent: Tick, normal: Tick, from: PlayerId, to: PlayerId) -> Tick {
    parts
        .iter()
        .filter(|p| p.separates(sent, from, to))
        .fold(normal, |t, p| t.max(p.end))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub delay: DelayModel,
    pub partitions: Vec<PartitionInterval>,
    pub seed: u64,
    /// Events after this time are not processed and the trace is marked
    /// truncated.
    pub time_limit: Tick,
    pub kappa: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub count: u64,
    pub bytes: u64,
}

impl Tally {
    fn add(&mut self, count: u64, bytes: u64) {
        self.count += count;
        self.bytes += bytes;
    }
}

/// Point-to-point sends grouped by the message's round and kind.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub per_round: BTreeMap<Round, BTreeMap<Kind, Tally>>,
}

impl Metrics {
    pub fn total(&self) -> Tally {
        let mut t = Tally::default();
        for kinds in self.per_round.values() {
            for k in kinds.values() {
                t.add(k.count, k.bytes);
            }
        }
        t
    }

    pub fn by_kind(&self) -> BTreeMap<Kind, Tally> {
        let mut out: BTreeMap<Kind, Tally> = BTreeMap::new();
        for kinds in self.per_round.values() {
            for (kind, t) in kinds {
                out.entry(*kind).or_default().add(t.count, t.bytes);
            }
        }
        out
    }

    pub fn round(&self, r: Round) -> Tally {
        let mut t = Tally::default();
        for k in self.per_round.get(&r).into_iter().flat_map(|m| m.values()) {
            t.add(k.count, k.bytes);
        }
        t
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("player {from:?} sent a message signed as {signer:?}")]
    Forgery { from: PlayerId, signer: PlayerId },
    #[error("player {0:?} sent a message with an invalid signature")]
    BadSignature(PlayerId),
}

#[derive(Debug)]
enum Pending {
    Msg { to: PlayerId, from: PlayerId, msg: Arc<Message>, att: Attestation },
    Timer { to: PlayerId, token: u64 },
}

#[derive(Debug)]
struct Scheduled {
    time: Tick,
    seq: u64,
    what: Pending,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

pub struct RunResult {
    pub trace: RunTrace,
    pub metrics: Metrics,
    pub replicas: Vec<Replica>,
}

pub struct Simulation {
    cfg: NetConfig,
    reg: Arc<Registry>,
    replicas: Vec<Replica>,
    ctl: Option<Controller>,
    queue: BinaryHeap<Reverse<Scheduled>>,
    rng: ChaCha8Rng,
    seq: u64,
    now: Tick,
    metrics: Metrics,
    events: Vec<TraceEvent>,
}

impl Simulation {
    /// `replicas[i]` must belong to player `i`.
    pub fn new(cfg: NetConfig, reg: Arc<Registry>, replicas: Vec<Replica>, ctl: Option<Controller>) -> Self {
        for (i, r) in replicas.iter().enumerate() {
            assert_eq!(r.id().index(), i, "replica order");
        }
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Simulation {
            cfg,
            reg,
            replicas,
            ctl,
            queue: BinaryHeap::new(),
            rng,
            seq: 0,
            now: 0,
            metrics: Metrics::default(),
            events: Vec::new(),
        }
    }

    fn n(&self) -> usize {
        self.replicas.len()
    }

    fn schedule(&mut self, time: Tick, what: Pending) {
        self.seq += 1;
        self.queue.push(Reverse(Scheduled { time, seq: self.seq, what }));
    }

    fn log(&mut self, event: Event) {
        self.events.push(TraceEvent { time: self.now, event });
    }

    fn is_member(&self, p: PlayerId) -> bool {
        self.ctl.as_ref().is_some_and(|c| c.is_member(p))
    }

    fn send(&mut self, o: Outgoing) -> Result<(), SimError> {
        let Outgoing { from, to, msg } = o;
        if msg.sender != from || msg.sig.signer != from {
            return Err(SimError::Forgery { from, signer: msg.sig.signer });
        }
        let att = msg.attestation();
        if !att.verify(&self.reg) {
            return Err(SimError::BadSignature(from));
        }
        let n = self.n();
        let recipients: Vec<PlayerId> = match &to {
            Target::All => (0..n as u32).map(PlayerId).filter(|p| *p != from).collect(),
            Target::To(list) => list.iter().copied().filter(|p| *p != from && p.index() < n).collect(),
        };
        if recipients.is_empty() {
            return Ok(());
        }
        let bytes = msg.wire_size(self.cfg.kappa) as u64;
        let kind = msg.kind();
        self.metrics
            .per_round
            .entry(msg.round)
            .or_default()
            .entry(kind)
            .or_default()
            .add(recipients.len() as u64, bytes * recipients.len() as u64);
        self.log(Event::Send {
            from,
            to: match to {
                Target::All => None,
                Target::To(_) => Some(recipients.clone()),
            },
            kind,
            round: msg.round,
            digest: msg.body.value().digest(),
            bytes,
        });
        let msg = Arc::new(msg);
        for p in recipients {
            let normal = self.now + self.cfg.delay.sample(self.now, &mut self.rng);
            let at = partitioned_arrival(&self.cfg.partitions, self.now, normal, from, p);
            self.schedule(at, Pending::Msg { to: p, from, msg: msg.clone(), att });
        }
        Ok(())
    }

    fn handle(&mut self, who: PlayerId, out: Output) -> Result<(), SimError> {
        for e in &out.events {
            self.log(Event::Engine { player: who, event: e.clone() });
        }
        let (sends, timers) = if let Some(ctl) = self.ctl.as_mut().filter(|c| c.is_member(who)) {
            ctl.outbound(who, out.actions, &out.events)
        } else {
            let mut sends = Vec::new();
            let mut timers = Vec::new();
            for a in out.actions {
                match a {
                    Action::Broadcast(m) => sends.push(Outgoing { from: who, to: Target::All, msg: m }),
                    Action::SendTo(to, m) => sends.push(Outgoing { from: who, to: Target::To(to), msg: m }),
                    t => timers.push(t),
                }
            }
            (sends, timers)
        };
        for t in timers {
            if let Action::ArmTimer { at, token } = t {
                self.schedule(at.max(self.now), Pending::Timer { to: who, token });
            }
        }
        for s in sends {
            self.check_origin(who, &s)?;
            self.send(s)?;
        }
        Ok(())
    }

    /// Honest players only send as themselves; the collusion only as its
    /// members.
    fn check_origin(&self, who: PlayerId, s: &Outgoing) -> Result<(), SimError> {
        let ok = s.from == who || (self.is_member(who) && self.is_member(s.from));
        if ok {
            Ok(())
        } else {
            Err(SimError::Forgery { from: who, signer: s.from })
        }
    }

    /// Runs to quiescence or the time limit.
    pub fn run(mut self, header: TraceHeader) -> Result<RunResult, SimError> {
        for i in 0..self.n() {
            let out = self.replicas[i].start(0);
            self.handle(PlayerId(i as u32), out)?;
        }
        let mut truncated = false;
        while let Some(Reverse(ev)) = self.queue.pop() {
            if ev.time > self.cfg.time_limit {
                truncated = true;
                break;
            }
            self.now = ev.time;
            match ev.what {
                Pending::Timer { to, token } => {
                    let out = self.replicas[to.index()].timer(self.now, token);
                    self.handle(to, out)?;
                }
                Pending::Msg { to, from, msg, att } => {
                    self.log(Event::Deliver { from, to, kind: msg.kind(), round: msg.round });
                    let mut deliver = true;
                    if let Some(ctl) = self.ctl.as_mut().filter(|c| c.is_member(to)) {
                        let (pass, extra) = ctl.inbound(to, &msg);
                        deliver = pass;
                        for s in extra {
                            self.check_origin(to, &s)?;
                            self.send(s)?;
                        }
                    }
                    if deliver {
                        let out = self.replicas[to.index()].deliver_attested(self.now, (*msg).clone(), att);
                        self.handle(to, out)?;
                    }
                }
            }
        }
        let trace = RunTrace {
            header,
            events: self.events,
            footer: TraceFooter { truncated, end_time: self.now },
        };
        Ok(RunResult { trace, metrics: self.metrics, replicas: self.replicas })
    }
}
