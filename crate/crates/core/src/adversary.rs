//! Deviating strategies and the collusion controller that runs them.
//!
//! Every colluding player still runs an ordinary [`Replica`](crate::engine::Replica)
//! to track the protocol. The [`Controller`] sits between those replicas and
//! the network: it filters, retargets or duplicates what they send, and it
//! hides from them the messages that belong to the other side of a fork.
//! It can only sign with the keys of its members.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::crypto::KeyPair;
use crate::engine::{Action, EngineEvent, Phase};
use crate::message::{Attestation, Body, Kind, Message};
use crate::types::{leader_of, Block, Digest, PlayerId, Round, Value};

/// Message kinds that carry protocol progress, as opposed to view change
/// and accountability traffic.
pub const PROTOCOL_KINDS: [Kind; 5] = [Kind::Propose, Kind::Vote, Kind::Commit, Kind::Reveal, Kind::Final];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    /// Follow the protocol.
    Pi0,
    /// Stay silent on the listed kinds. View change traffic is still sent so
    /// the abstainer cannot be told apart from a slow honest player.
    PiAbs {
        #[serde(default = "default_abstain")]
        kinds: Vec<Kind>,
    },
    /// Equivocate in rounds led by a colluder: the A side (everyone outside
    /// `b`) sees one block, `b` sees another.
    #[serde(rename = "pi_ds")]
    PiDS {
        #[serde(default)]
        a: Vec<PlayerId>,
        #[serde(default)]
        b: Vec<PlayerId>,
        #[serde(default = "default_ds_phases")]
        phases: Vec<Phase>,
    },
    /// Abstain under non-colluding leaders, propose without the censored
    /// transactions otherwise.
    #[serde(rename = "pi_pc")]
    PiPC,
    /// Byzantine only: send a ViewChange at the start of every round.
    ViewChangeStorm,
}

fn default_abstain() -> Vec<Kind> {
    PROTOCOL_KINDS.to_vec()
}

fn default_ds_phases() -> Vec<Phase> {
    vec![Phase::Propose, Phase::Vote, Phase::Commit]
}

impl Strategy {
    pub fn abstain() -> Self {
        Strategy::PiAbs { kinds: default_abstain() }
    }

    pub fn double_sign(a: Vec<PlayerId>, b: Vec<PlayerId>) -> Self {
        Strategy::PiDS { a, b, phases: default_ds_phases() }
    }

    /// Equivocating leader: two proposals, honest votes.
    pub fn equivocate(a: Vec<PlayerId>, b: Vec<PlayerId>) -> Self {
        Strategy::PiDS { a, b, phases: vec![Phase::Propose] }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Pi0 => "pi0",
            Strategy::PiAbs { .. } => "pi_abs",
            Strategy::PiDS { .. } => "pi_ds",
            Strategy::PiPC => "pi_pc",
            Strategy::ViewChangeStorm => "view_change_storm",
        }
    }

    fn ds_phase(&self, p: Phase) -> bool {
        matches!(self, Strategy::PiDS { phases, .. } if phases.contains(&p))
    }
}

/// Default fork split: the first `n - t0 - |forkers|` of `others` form A,
/// the rest form B, so A plus the forkers is exactly a quorum.
pub fn fork_partition(n: usize, t0: usize, forkers: usize, others: &[PlayerId]) -> (Vec<PlayerId>, Vec<PlayerId>) {
    let a_len = (n - t0).saturating_sub(forkers).min(others.len());
    (others[..a_len].to_vec(), others[a_len..].to_vec())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Target {
    /// Everyone except the sender.
    All,
    To(Vec<PlayerId>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outgoing {
    pub from: PlayerId,
    pub to: Target,
    pub msg: Message,
}

/// Second side of an equivocated round.
#[derive(Clone, Debug)]
struct Fork {
    a_digest: Digest,
    block: Block,
    proposal: Attestation,
    b: BTreeSet<PlayerId>,
    votes: BTreeMap<PlayerId, Attestation>,
    commits: BTreeMap<PlayerId, Attestation>,
    committed: BTreeSet<PlayerId>,
    revealed: BTreeSet<PlayerId>,
}

impl Fork {
    fn digest(&self) -> Digest {
        self.block.digest
    }
}

pub struct Controller {
    n: usize,
    t0: usize,
    keys: BTreeMap<PlayerId, KeyPair>,
    plans: BTreeMap<PlayerId, Strategy>,
    overrides: BTreeMap<PlayerId, (Round, Strategy)>,
    forks: BTreeMap<Round, Fork>,
}

impl Controller {
    /// `members` pairs each colluder's key with its strategy.
    pub fn new(n: usize, t0: usize, members: Vec<(KeyPair, Strategy)>) -> Self {
        let mut keys = BTreeMap::new();
        let mut plans = BTreeMap::new();
        for (k, s) in members {
            plans.insert(k.owner(), s);
            keys.insert(k.owner(), k);
        }
        Controller { n, t0, keys, plans, overrides: BTreeMap::new(), forks: BTreeMap::new() }
    }

    /// Switches one member to `strategy` from round `from` on.
    pub fn set_override(&mut self, player: PlayerId, from: Round, strategy: Strategy) {
        assert!(self.is_member(player), "override for non-member {player:?}");
        self.overrides.insert(player, (from, strategy));
    }

    pub fn is_member(&self, p: PlayerId) -> bool {
        self.plans.contains_key(&p)
    }

    pub fn members(&self) -> impl Iterator<Item = PlayerId> + '_ {
        self.plans.keys().copied()
    }

    pub fn strategy(&self, p: PlayerId, r: Round) -> &Strategy {
        match self.overrides.get(&p) {
            Some((from, s)) if r >= *from => s,
            _ => &self.plans[&p],
        }
    }

    /// True if the member ever follows PiPC (its replica should then build
    /// blocks without censored transactions).
    pub fn censors(&self, p: PlayerId) -> bool {
        self.plans.get(&p) == Some(&Strategy::PiPC)
            || self.overrides.get(&p).is_some_and(|(_, s)| *s == Strategy::PiPC)
    }

    /// Rounds in which a second block was shown to a B side.
    pub fn fork_rounds(&self) -> Vec<Round> {
        self.forks.keys().copied().collect()
    }

    fn q(&self) -> usize {
        self.n - self.t0
    }

    fn everyone_but(&self, from: PlayerId, skip: &BTreeSet<PlayerId>) -> Vec<PlayerId> {
        (0..self.n as u32).map(PlayerId).filter(|p| *p != from && !skip.contains(p)).collect()
    }

    fn sign(&self, who: PlayerId, round: Round, body: Body) -> Message {
        Message::sign(&self.keys[&who], round, body)
    }

    /// Screens a message addressed to member `to`. Returns whether the
    /// member's replica should see it, plus anything the collusion sends in
    /// reaction.
    pub fn inbound(&mut self, _to: PlayerId, msg: &Message) -> (bool, Vec<Outgoing>) {
        let Some(fork) = self.forks.get_mut(&msg.round) else {
            return (true, vec![]);
        };
        if msg.body.value() != Value::Block(fork.digest()) {
            return (true, vec![]);
        }
        match &msg.body {
            Body::Vote { .. } => {
                fork.votes.entry(msg.sender).or_insert(msg.attestation());
            }
            Body::Commit { votes, .. } => {
                for a in votes {
                    fork.votes.entry(a.signer()).or_insert(*a);
                }
                fork.commits.entry(msg.sender).or_insert(msg.attestation());
            }
            Body::Reveal { commits, .. } | Body::Final { commits, .. } => {
                for a in commits {
                    fork.commits.entry(a.signer()).or_insert(*a);
                }
            }
            _ => {}
        }
        let round = msg.round;
        (false, self.advance_fork(round))
    }

    /// Pushes the B side forward once it has enough signatures.
    fn advance_fork(&mut self, r: Round) -> Vec<Outgoing> {
        let q = self.q();
        let forkers: Vec<PlayerId> =
            self.members().filter(|p| self.strategy(*p, r).ds_phase(Phase::Commit)).collect();
        let mut out = Vec::new();
        let Some(fork) = self.forks.get(&r) else { return out };
        let b: Vec<PlayerId> = fork.b.iter().copied().collect();
        let (d, proposal) = (fork.digest(), fork.proposal);
        if fork.votes.len() >= q {
            let votes: Vec<Attestation> = fork.votes.values().take(q).copied().collect();
            for &p in &forkers {
                if self.forks[&r].committed.contains(&p) {
                    continue;
                }
                let body = Body::Commit { value: Value::Block(d), proposal: Some(proposal), votes: votes.clone() };
                let m = self.sign(p, r, body);
                let f = self.forks.get_mut(&r).unwrap();
                f.committed.insert(p);
                f.commits.entry(p).or_insert(m.attestation());
                out.push(Outgoing { from: p, to: Target::To(b.clone()), msg: m });
            }
        }
        let fork = &self.forks[&r];
        if fork.commits.len() >= q {
            let w: Vec<Attestation> = fork.commits.values().take(q).copied().collect();
            let block = fork.block.clone();
            for &p in &forkers {
                if self.forks[&r].revealed.contains(&p) {
                    continue;
                }
                let reveal = self.sign(p, r, Body::Reveal { digest: d, proposal, commits: w.clone() });
                let fin = self.sign(
                    p,
                    r,
                    Body::Final { digest: d, proposal, block: Some(block.clone()), commits: w.clone() },
                );
                self.forks.get_mut(&r).unwrap().revealed.insert(p);
                out.push(Outgoing { from: p, to: Target::To(b.clone()), msg: reveal });
                out.push(Outgoing { from: p, to: Target::To(b.clone()), msg: fin });
            }
        }
        out
    }

    /// Rewrites what member `from`'s replica produced.
    pub fn outbound(&mut self, from: PlayerId, actions: Vec<Action>, events: &[EngineEvent]) -> (Vec<Outgoing>, Vec<Action>) {
        let mut out = Vec::new();
        let mut timers = Vec::new();
        for e in events {
            if let EngineEvent::RoundEnter { round } = e {
                if *self.strategy(from, *round) == Strategy::ViewChangeStorm {
                    let m = self.sign(from, *round, Body::ViewChange { phase: Phase::Propose });
                    out.push(Outgoing { from, to: Target::All, msg: m });
                }
            }
        }
        for a in actions {
            let (to, msg) = match a {
                Action::Broadcast(m) => (Target::All, m),
                Action::SendTo(to, m) => (Target::To(to), m),
                t @ Action::ArmTimer { .. } => {
                    timers.push(t);
                    continue;
                }
            };
            out.extend(self.rewrite(from, to, msg));
        }
        (out, timers)
    }

    fn rewrite(&mut self, from: PlayerId, to: Target, msg: Message) -> Vec<Outgoing> {
        let r = msg.round;
        let kind = msg.kind();
        let strategy = self.strategy(from, r).clone();
        let pass = vec![Outgoing { from, to: to.clone(), msg: msg.clone() }];
        match strategy {
            Strategy::Pi0 | Strategy::ViewChangeStorm => pass,
            Strategy::PiAbs { kinds } => {
                if kinds.contains(&kind) {
                    vec![]
                } else {
                    pass
                }
            }
            Strategy::PiPC => {
                if PROTOCOL_KINDS.contains(&kind) && !self.is_member(leader_of(r, self.n)) {
                    vec![]
                } else {
                    pass
                }
            }
            Strategy::PiDS { b, phases, .. } => self.double_sign(from, to, msg, &b, &phases),
        }
    }

    fn double_sign(&mut self, from: PlayerId, to: Target, msg: Message, b: &[PlayerId], phases: &[Phase]) -> Vec<Outgoing> {
        let r = msg.round;
        if let Body::Propose { block } = &msg.body {
            if phases.contains(&Phase::Propose) && !self.forks.contains_key(&r) && !b.is_empty() {
                let alt = alternative(block);
                let p = self.sign(from, r, Body::Propose { block: alt.clone() });
                let b: BTreeSet<PlayerId> = b.iter().copied().collect();
                let fork = Fork {
                    a_digest: block.digest,
                    block: alt,
                    proposal: p.attestation(),
                    b: b.clone(),
                    votes: BTreeMap::new(),
                    commits: BTreeMap::new(),
                    committed: BTreeSet::new(),
                    revealed: BTreeSet::new(),
                };
                self.forks.insert(r, fork);
                return vec![
                    Outgoing { from, to: Target::To(self.everyone_but(from, &b)), msg },
                    Outgoing { from, to: Target::To(b.into_iter().collect()), msg: p },
                ];
            }
        }
        let Some(fork) = self.forks.get(&r) else {
            return vec![Outgoing { from, to, msg }];
        };
        if !PROTOCOL_KINDS.contains(&msg.kind()) || msg.body.value() != Value::Block(fork.a_digest) {
            return vec![Outgoing { from, to, msg }];
        }
        // A-side traffic of a forked round stays away from B.
        let b = fork.b.clone();
        let mut out = vec![Outgoing { from, to: Target::To(self.everyone_but(from, &b)), msg: msg.clone() }];
        if msg.kind() == Kind::Vote && phases.contains(&Phase::Vote) {
            let body = Body::Vote { digest: fork.digest(), proposal: fork.proposal };
            let v = self.sign(from, r, body);
            self.forks.get_mut(&r).unwrap().votes.entry(from).or_insert(v.attestation());
            out.push(Outgoing { from, to: Target::To(b.into_iter().collect()), msg: v });
            out.extend(self.advance_fork(r));
        }
        out
    }
}

/// A block for the B side that differs from `block` in digest only by its
/// content: one transaction fewer, or a perturbed parent if it is empty.
fn alternative(block: &Block) -> Block {
    let mut txs = block.txs.clone();
    let parent = if txs.pop().is_some() {
        block.parent_digest
    } else {
        Digest::of_parts(&[b"pRFT/alt", &block.parent_digest.0])
    };
    Block::new(block.round, block.proposer, parent, txs)
}
