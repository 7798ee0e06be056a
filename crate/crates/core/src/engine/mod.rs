//! The replica state machine: four-phase rounds, tentative and final
//! consensus, timers, and view change.
//!
//! A [`Replica`] is driven by [`Replica::start`], [`Replica::deliver`] and
//! [`Replica::timer`]. Each call returns the network actions and trace events
//! it produced. Messages a replica broadcasts are applied to its own state
//! immediately, before the call returns.

mod evidence;

pub use evidence::Evidence;

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::crypto::{KeyPair, Registry};
use crate::ledger::Ledger;
pub use crate::message::Phase;
use crate::message::{Attestation, Body, Kind, Message};
use crate::pof::{verify_pof, CollateralLedger};
use crate::types::{
    genesis_digest, leader_of, Block, Digest, PlayerId, Round, Tick, Transaction, Value,
};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub n: usize,
    pub t0: usize,
    /// Per-phase local waiting time.
    pub delta: Tick,
    pub block_size: usize,
    /// Require `> n - t0` commit-views instead of `>= n - t0`.
    pub strict_step5: bool,
    /// Rounds `>= max_rounds` are never started.
    pub max_rounds: Round,
    /// Leave censored transactions out of own proposals.
    pub exclude_censored: bool,
}

impl EngineConfig {
    pub fn new(n: usize, t0: usize) -> Self {
        EngineConfig {
            n,
            t0,
            delta: 40,
            block_size: 4,
            strict_step5: false,
            max_rounds: Round::MAX,
            exclude_censored: false,
        }
    }

    /// Quorum size `n - t0`.
    pub fn quorum(&self) -> usize {
        self.n - self.t0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    /// Send to every player except self.
    Broadcast(Message),
    SendTo(Vec<PlayerId>, Message),
    ArmTimer { at: Tick, token: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FinalVia {
    /// `n - t0` reveals.
    Reveals,
    /// Majority of Final messages.
    Finals,
    /// Adopted from a certified Final after leaving the round.
    CatchUp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ExitVia {
    Finalized,
    Expose,
    ViewChange,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EngineEvent {
    RoundEnter { round: Round },
    Phase { round: Round, phase: Phase },
    Tentative { round: Round, digest: Digest },
    Finalize { round: Round, digest: Digest, via: FinalVia, txs: Vec<u64> },
    FinalConflict { round: Round, have: Digest, got: Digest },
    RoundExit { round: Round, via: ExitVia },
    ViewChangeSent { round: Round, phase: Phase },
    CommitViewSent { round: Round },
    ExposeSent { round: Round, accused: Vec<PlayerId> },
    Stash { round: Round, accused: Vec<PlayerId>, fresh: Vec<PlayerId> },
    Timeout { round: Round, phase: Phase },
    Dropped { round: Round, kind: Kind, from: PlayerId, reason: String },
    Halted { round: Round },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Output {
    pub actions: Vec<Action>,
    pub events: Vec<EngineEvent>,
}

impl Output {
    pub fn extend(&mut self, other: Output) {
        self.actions.extend(other.actions);
        self.events.extend(other.events);
    }
}

#[derive(Clone, Debug, Default)]
struct RoundState {
    blocks: BTreeMap<Digest, Block>,
    proposals: BTreeMap<Digest, Attestation>,
    votes: BTreeMap<Digest, BTreeMap<PlayerId, Attestation>>,
    commits: BTreeMap<Digest, BTreeMap<PlayerId, Attestation>>,
    reveals: BTreeMap<Digest, BTreeSet<PlayerId>>,
    finals: BTreeMap<Digest, BTreeSet<PlayerId>>,
    qc: BTreeMap<Digest, Vec<Attestation>>,
    vcs: BTreeMap<PlayerId, Attestation>,
    cvs: BTreeSet<PlayerId>,
    my_cv: Option<Message>,
    sent_vote: bool,
    sent_commit: bool,
    sent_reveal: bool,
    sent_final: bool,
    vc_sent: bool,
    cv_sent: bool,
    decided: Option<Digest>,
    evidence: Evidence,
}

pub struct Replica {
    cfg: EngineConfig,
    key: KeyPair,
    reg: Arc<Registry>,
    txs: Arc<Vec<(Round, Transaction)>>,
    round: Round,
    phase: Phase,
    halted: bool,
    started: bool,
    now: Tick,
    timer_seq: u64,
    timer_live: Option<u64>,
    rounds: BTreeMap<Round, RoundState>,
    future: BTreeMap<Round, Vec<(Message, Attestation)>>,
    /// Highest later round for which a certified Final has been seen.
    ahead: Option<Round>,
    ledger: Ledger,
    collateral: CollateralLedger,
    queue: VecDeque<(Message, Attestation)>,
    /// Attestations already checked against the registry, by signature tag.
    verified: RefCell<HashMap<Digest, Attestation>>,
    out: Output,
}

impl Replica {
    /// `txs` lists every transaction with the round from which it is
    /// available to proposers, in arrival order.
    pub fn new(cfg: EngineConfig, key: KeyPair, reg: Arc<Registry>, txs: Arc<Vec<(Round, Transaction)>>) -> Self {
        let n = cfg.n;
        Replica {
            cfg,
            key,
            reg,
            txs,
            round: 0,
            phase: Phase::Propose,
            halted: false,
            started: false,
            now: 0,
            timer_seq: 0,
            timer_live: None,
            rounds: BTreeMap::new(),
            future: BTreeMap::new(),
            ahead: None,
            ledger: Ledger::new(),
            collateral: CollateralLedger::new(n, 1),
            queue: VecDeque::new(),
            verified: RefCell::default(),
            out: Output::default(),
        }
    }

    pub fn id(&self) -> PlayerId {
        self.key.owner()
    }

    pub fn key(&self) -> &KeyPair {
        &self.key
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn round(&self) -> Round {
        self.round
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn is_halted(&self) -> bool {
        self.halted
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn collateral(&self) -> &CollateralLedger {
        &self.collateral
    }

    pub fn evidence(&self, round: Round) -> Option<&Evidence> {
        self.rounds.get(&round).map(|r| &r.evidence)
    }

    /// Enters round 0.
    pub fn start(&mut self, now: Tick) -> Output {
        self.now = now;
        if !self.started {
            self.started = true;
            self.enter_round(0);
            self.drain();
        }
        std::mem::take(&mut self.out)
    }

    pub fn deliver(&mut self, now: Tick, msg: Message) -> Output {
        let att = msg.attestation();
        self.deliver_attested(now, msg, att)
    }

    /// Like [`deliver`](Self::deliver) with `att == msg.attestation()`
    /// already computed, so a broadcast is hashed once rather than once per
    /// receiver.
    pub fn deliver_attested(&mut self, now: Tick, msg: Message, att: Attestation) -> Output {
        self.now = now;
        debug_assert_eq!(att.sig, msg.sig);
        if att.sig == msg.sig && self.check_sig(&att) {
            self.process(msg, att);
        } else {
            self.drop_msg(&msg, "bad signature");
        }
        self.drain();
        std::mem::take(&mut self.out)
    }

    pub fn timer(&mut self, now: Tick, token: u64) -> Output {
        self.now = now;
        if self.timer_live == Some(token) && !self.halted {
            self.timer_live = None;
            self.on_timeout();
            self.drain();
        }
        std::mem::take(&mut self.out)
    }

    /// Mempool snapshot for the current round: available transactions not yet
    /// final, in arrival order.
    pub fn mempool(&self) -> Vec<Transaction> {
        self.txs
            .iter()
            .filter(|(r, t)| *r <= self.round && !self.ledger.is_tx_final(t.id))
            .map(|(_, t)| *t)
            .collect()
    }

    // ---- plumbing ----------------------------------------------------------

    fn q(&self) -> usize {
        self.cfg.quorum()
    }

    fn rs(&mut self, r: Round) -> &mut RoundState {
        self.rounds.entry(r).or_default()
    }

    fn emit(&mut self, e: EngineEvent) {
        self.out.events.push(e);
    }

    fn sign(&self, body: Body) -> Message {
        Message::sign(&self.key, self.round, body)
    }

    fn sign_for(&self, round: Round, body: Body) -> Message {
        Message::sign(&self.key, round, body)
    }

    fn broadcast(&mut self, msg: Message) {
        self.queue.push_back((msg.clone(), msg.attestation()));
        self.out.actions.push(Action::Broadcast(msg));
    }

    fn arm_timer(&mut self) {
        self.timer_seq += 1;
        self.timer_live = Some(self.timer_seq);
        self.out.actions.push(Action::ArmTimer { at: self.now + self.cfg.delta, token: self.timer_seq });
    }

    fn set_phase(&mut self, phase: Phase) {
        if self.phase != phase {
            self.phase = phase;
            let round = self.round;
            self.emit(EngineEvent::Phase { round, phase });
        }
        if phase != Phase::ViewChangeWait {
            self.arm_timer();
        } else {
            self.timer_live = None;
        }
    }

    fn drop_msg(&mut self, m: &Message, reason: &str) {
        self.emit(EngineEvent::Dropped {
            round: m.round,
            kind: m.kind(),
            from: m.sender,
            reason: reason.to_string(),
        });
    }

    fn drain(&mut self) {
        while let Some((m, att)) = self.queue.pop_front() {
            self.process(m, att);
        }
    }

    fn leader(&self, r: Round) -> PlayerId {
        leader_of(r, self.cfg.n)
    }

    /// True when `atts` holds at least a quorum of distinct, valid `kind`
    /// attestations for (`round`, `value`).
    fn valid_cert(&self, atts: &[Attestation], kind: Kind, round: Round, value: Value) -> bool {
        let mut signers = BTreeSet::new();
        for a in atts {
            if !a.is(kind, round, value) || a.signer().index() >= self.cfg.n || !self.check_sig(a) {
                return false;
            }
            signers.insert(a.signer());
        }
        signers.len() >= self.q()
    }

    fn check_sig(&self, a: &Attestation) -> bool {
        if self.verified.borrow().get(&a.sig.tag) == Some(a) {
            return true;
        }
        let ok = a.verify(&self.reg);
        if ok {
            self.verified.borrow_mut().insert(a.sig.tag, *a);
        }
        ok
    }

    fn certified_final(&self, m: &Message) -> bool {
        match &m.body {
            Body::Final { digest, proposal, commits, .. } => {
                self.valid_proposal(proposal, m.round, *digest)
                    && self.valid_cert(commits, Kind::Commit, m.round, Value::Block(*digest))
            }
            _ => false,
        }
    }

    fn valid_proposal(&self, a: &Attestation, round: Round, digest: Digest) -> bool {
        a.is(Kind::Propose, round, Value::Block(digest)) && a.signer() == self.leader(round) && self.check_sig(a)
    }

    // ---- round lifecycle ---------------------------------------------------

    fn enter_round(&mut self, r: Round) {
        self.round = r;
        self.timer_live = None;
        if r >= self.cfg.max_rounds {
            self.halted = true;
            self.emit(EngineEvent::Halted { round: r });
            return;
        }
        self.phase = Phase::Propose;
        self.emit(EngineEvent::RoundEnter { round: r });
        self.arm_timer();
        if self.leader(r) == self.id() {
            self.propose();
        }
        if let Some(buf) = self.future.remove(&r) {
            self.queue.extend(buf);
        }
    }

    fn exit_round(&mut self, via: ExitVia) {
        let r = self.round;
        if self.rounds.get(&r).and_then(|s| s.decided).is_none() {
            self.ledger.rollback(r);
        }
        self.emit(EngineEvent::RoundExit { round: r, via });
        self.enter_round(r + 1);
    }

    fn propose(&mut self) {
        let mut txs = Vec::new();
        for t in self.mempool() {
            if txs.len() >= self.cfg.block_size {
                break;
            }
            if self.cfg.exclude_censored && t.censored {
                continue;
            }
            txs.push(t);
        }
        let parent = self.ledger.last_final_digest().unwrap_or_else(genesis_digest);
        let block = Block::new(self.round, self.id(), parent, txs);
        let m = self.sign(Body::Propose { block });
        self.broadcast(m);
    }

    // ---- dispatch ----------------------------------------------------------

    fn process(&mut self, m: Message, att: Attestation) {
        if m.sender.index() >= self.cfg.n {
            return self.drop_msg(&m, "unknown sender");
        }
        if m.round > self.round || (self.halted && m.round >= self.round) {
            if !self.halted && self.certified_final(&m) && self.ahead.is_none_or(|a| a < m.round) {
                self.ahead = Some(m.round);
                let r = self.round;
                self.future.entry(m.round).or_default().push((m, att));
                return self.check_final(r);
            }
            self.future.entry(m.round).or_default().push((m, att));
            return;
        }
        match m.body.clone() {
            Body::Propose { block } => self.on_propose(&m, att, block),
            Body::Vote { digest, proposal } => self.on_vote(&m, att, digest, proposal),
            Body::Commit { value, proposal, votes } => self.on_commit(&m, att, value, proposal, votes),
            Body::Reveal { digest, proposal, commits } => self.on_reveal(&m, digest, proposal, commits),
            Body::Final { digest, proposal, block, commits } => self.on_final(&m, digest, proposal, block, commits),
            Body::Expose { proof } => self.on_expose(&m, proof),
            Body::ViewChange { .. } => self.on_view_change(&m, att),
            Body::CommitView { view_changes } => self.on_commit_view(&m, view_changes),
        }
    }

    fn note_proposal(&mut self, r: Round, a: Attestation, direct: bool) -> bool {
        let rs = self.rs(r);
        let fresh = if direct {
            rs.evidence.add_direct(a)
        } else {
            rs.evidence.add_bundle(Kind::Propose, [a])
        };
        if let Some(d) = a.stmt.value.digest() {
            rs.proposals.entry(d).or_insert(a);
        }
        if rs.proposals.len() > 1 && r == self.round {
            // Leader signed two different proposals this round.
            self.trigger_view_change();
        }
        fresh
    }

    fn on_propose(&mut self, m: &Message, att: Attestation, block: Block) {
        let r = m.round;
        if m.sender != self.leader(r) {
            return self.drop_msg(m, "propose from non-leader");
        }
        if !block.is_well_formed() || block.round != r || block.proposer != m.sender {
            return self.drop_msg(m, "malformed block");
        }
        let d = block.digest;
        self.rs(r).blocks.insert(d, block.clone());
        let fresh = self.note_proposal(r, att, true);
        if fresh {
            self.check_evidence(r);
        }
        if r == self.round && !self.halted {
            let rs = &self.rounds[&r];
            let can_vote = !rs.sent_vote && !rs.vc_sent && !rs.cv_sent && rs.proposals.len() == 1;
            if can_vote && self.acceptable(&block) {
                let m = self.sign(Body::Vote { digest: d, proposal: att });
                self.rs(r).sent_vote = true;
                self.broadcast(m);
                self.set_phase(Phase::Vote);
            }
        }
        self.check_final(r);
    }

    /// Transaction validity: ids unique within the block and not already final.
    fn acceptable(&self, block: &Block) -> bool {
        let mut ids = BTreeSet::new();
        block.txs.iter().all(|t| ids.insert(t.id) && !self.ledger.is_tx_final(t.id))
    }

    fn on_vote(&mut self, m: &Message, att: Attestation, digest: Digest, proposal: Attestation) {
        let r = m.round;
        if !self.valid_proposal(&proposal, r, digest) {
            return self.drop_msg(m, "vote without matching proposal");
        }
        let mut fresh = self.note_proposal(r, proposal, false);
        fresh |= self.add_vote(r, att, true);
        self.check_commit(r);
        if fresh {
            self.check_evidence(r);
        }
    }

    fn add_vote(&mut self, r: Round, a: Attestation, direct: bool) -> bool {
        let rs = self.rs(r);
        if let Some(d) = a.stmt.value.digest() {
            rs.votes.entry(d).or_default().entry(a.signer()).or_insert(a);
        }
        if direct {
            rs.evidence.add_direct(a)
        } else {
            false
        }
    }

    fn check_commit(&mut self, r: Round) {
        if r != self.round || self.halted {
            return;
        }
        let q = self.q();
        let rs = &self.rounds[&r];
        if rs.sent_commit || rs.vc_sent || rs.cv_sent {
            return;
        }
        let Some((d, votes)) = rs.votes.iter().find(|(_, v)| v.len() >= q) else {
            return;
        };
        let Some(proposal) = rs.proposals.get(d).copied() else {
            return;
        };
        let votes: Vec<Attestation> = votes.values().take(q).copied().collect();
        let m = self.sign(Body::Commit { value: Value::Block(*d), proposal: Some(proposal), votes });
        self.rs(r).sent_commit = true;
        self.broadcast(m);
        self.set_phase(Phase::Commit);
    }

    fn on_commit(
        &mut self,
        m: &Message,
        att: Attestation,
        value: Value,
        proposal: Option<Attestation>,
        votes: Vec<Attestation>,
    ) {
        let r = m.round;
        let mut fresh = false;
        match value {
            Value::Bottom => {
                if !votes.is_empty() {
                    return self.drop_msg(m, "bottom commit with votes");
                }
            }
            Value::Block(d) => {
                let Some(p) = proposal.filter(|p| self.valid_proposal(p, r, d)) else {
                    return self.drop_msg(m, "commit without matching proposal");
                };
                if !self.valid_cert(&votes, Kind::Vote, r, value) {
                    return self.drop_msg(m, "commit with invalid vote set");
                }
                fresh |= self.note_proposal(r, p, false);
                let rs = self.rs(r);
                fresh |= rs.evidence.add_bundle(Kind::Vote, votes.iter().copied());
                for a in &votes {
                    rs.votes.entry(d).or_default().entry(a.signer()).or_insert(*a);
                }
                rs.commits.entry(d).or_default().entry(m.sender).or_insert(att);
            }
        }
        fresh |= self.rs(r).evidence.add_direct(att);
        self.check_commit(r);
        self.check_reveal(r);
        if fresh {
            self.check_evidence(r);
        }
    }

    fn check_reveal(&mut self, r: Round) {
        if r != self.round || self.halted {
            return;
        }
        let q = self.q();
        let rs = &self.rounds[&r];
        if rs.sent_reveal || rs.vc_sent || rs.cv_sent {
            return;
        }
        let Some((d, commits)) = rs.commits.iter().find(|(_, c)| c.len() >= q) else {
            return;
        };
        let d = *d;
        let Some(proposal) = rs.proposals.get(&d).copied() else {
            return;
        };
        let w: Vec<Attestation> = commits.values().take(q).copied().collect();
        let block = rs.blocks.get(&d).cloned();
        let m = self.sign(Body::Reveal { digest: d, proposal, commits: w.clone() });
        let rs = self.rs(r);
        rs.sent_reveal = true;
        rs.qc.entry(d).or_insert(w);
        if let Some(b) = block {
            self.ledger.mark_tentative(&b);
            self.emit(EngineEvent::Tentative { round: r, digest: d });
        }
        self.broadcast(m);
        self.set_phase(Phase::Reveal);
    }

    fn on_reveal(&mut self, m: &Message, digest: Digest, proposal: Attestation, commits: Vec<Attestation>) {
        let r = m.round;
        let v = Value::Block(digest);
        if !self.valid_proposal(&proposal, r, digest) {
            return self.drop_msg(m, "reveal without matching proposal");
        }
        if !self.valid_cert(&commits, Kind::Commit, r, v) {
            return self.drop_msg(m, "reveal with invalid commit set");
        }
        let mut fresh = self.note_proposal(r, proposal, false);
        fresh |= self.absorb_commits(r, digest, &commits);
        self.rs(r).reveals.entry(digest).or_default().insert(m.sender);
        self.check_reveal(r);
        if fresh {
            self.check_evidence(r);
        }
        self.check_final(r);
    }

    fn absorb_commits(&mut self, r: Round, d: Digest, commits: &[Attestation]) -> bool {
        let rs = self.rs(r);
        let fresh = rs.evidence.add_bundle(Kind::Commit, commits.iter().copied());
        for a in commits {
            rs.commits.entry(d).or_default().entry(a.signer()).or_insert(*a);
        }
        rs.qc.entry(d).or_insert_with(|| commits.to_vec());
        fresh
    }

    fn on_final(
        &mut self,
        m: &Message,
        digest: Digest,
        proposal: Attestation,
        block: Option<Block>,
        commits: Vec<Attestation>,
    ) {
        let r = m.round;
        if !self.valid_proposal(&proposal, r, digest) {
            return self.drop_msg(m, "final without matching proposal");
        }
        if !self.valid_cert(&commits, Kind::Commit, r, Value::Block(digest)) {
            return self.drop_msg(m, "final without commit certificate");
        }
        if let Some(b) = &block {
            if !b.is_well_formed() || b.digest != digest || b.round != r {
                return self.drop_msg(m, "final with mismatched block");
            }
            self.rs(r).blocks.entry(digest).or_insert_with(|| b.clone());
        }
        let mut fresh = self.note_proposal(r, proposal, false);
        fresh |= self.absorb_commits(r, digest, &commits);
        self.rs(r).finals.entry(digest).or_default().insert(m.sender);
        if fresh {
            self.check_evidence(r);
        }
        self.check_final(r);
    }

    /// Decides round `r` if a finality rule is met and the block is known.
    fn check_final(&mut self, r: Round) {
        let (q, n) = (self.q(), self.cfg.n);
        let current = r == self.round && !self.halted;
        let Some(rs) = self.rounds.get(&r) else { return };
        if rs.decided.is_some() {
            return;
        }
        let live = current && !rs.cv_sent;
        // Having asked for a view change, or seen a later round certified,
        // the replica may also adopt any certified Final for this round.
        let stranded = !live || rs.vc_sent || self.ahead.is_some_and(|a| a > r);
        let mut pick = None;
        if live {
            pick = rs
                .reveals
                .iter()
                .find(|(_, s)| s.len() >= q)
                .map(|(d, _)| (*d, FinalVia::Reveals))
                .or_else(|| rs.finals.iter().find(|(_, s)| 2 * s.len() > n).map(|(d, _)| (*d, FinalVia::Finals)));
        }
        if pick.is_none() && stranded {
            pick = rs.finals.iter().find(|(_, s)| !s.is_empty()).map(|(d, _)| (*d, FinalVia::CatchUp));
        }
        let Some((d, via)) = pick else { return };
        let Some(block) = rs.blocks.get(&d).cloned() else { return };
        self.finalize(r, block, via);
    }

    fn finalize(&mut self, r: Round, block: Block, via: FinalVia) {
        let d = block.digest;
        match self.ledger.finalize(&block) {
            Ok(_) => {}
            Err(crate::ledger::LedgerError::Conflict { have, got, .. }) => {
                self.emit(EngineEvent::FinalConflict { round: r, have, got });
                return;
            }
        }
        let rs = self.rs(r);
        rs.decided = Some(d);
        let send = via != FinalVia::CatchUp && !rs.sent_final;
        let proposal = rs.proposals.get(&d).copied();
        let qc = rs.qc.get(&d).cloned();
        self.emit(EngineEvent::Finalize { round: r, digest: d, via, txs: block.tx_ids() });
        if send {
            if let (Some(proposal), Some(commits)) = (proposal, qc) {
                self.rs(r).sent_final = true;
                let m = self.sign_for(r, Body::Final { digest: d, proposal, block: Some(block), commits });
                self.broadcast(m);
            }
        }
        if r == self.round && !self.halted {
            self.exit_round(ExitVia::Finalized);
        }
    }

    // ---- accountability ----------------------------------------------------

    /// Broadcasts an Expose when the scan finds more than `t0` double-signers
    /// and at least one of them is not yet stashed here.
    fn check_evidence(&mut self, r: Round) {
        let t0 = self.cfg.t0;
        let Some(rs) = self.rounds.get(&r) else { return };
        let conflicting = rs.evidence.conflicting();
        if conflicting.len() <= t0 || conflicting.iter().all(|p| self.collateral.is_stashed(*p)) {
            return;
        }
        let accused = rs.evidence.scan(r, t0);
        if accused.len() <= t0 {
            return;
        }
        let proof = rs.evidence.full_proof(r);
        let all: Vec<PlayerId> = proof.accused().into_iter().collect();
        let m = self.sign_for(r, Body::Expose { proof });
        self.emit(EngineEvent::ExposeSent { round: r, accused: all });
        // Apply locally right away so no Final for this round slips in.
        self.out.actions.push(Action::Broadcast(m.clone()));
        self.apply_expose(r, &m);
    }

    fn on_expose(&mut self, m: &Message, proof: crate::pof::ProofOfFraud) {
        if proof.round != m.round {
            return self.drop_msg(m, "expose round mismatch");
        }
        match verify_pof(&proof, &self.reg, self.cfg.t0) {
            Ok(_) => self.apply_expose(m.round, m),
            Err(e) => self.drop_msg(m, &format!("invalid proof: {e}")),
        }
    }

    fn apply_expose(&mut self, r: Round, m: &Message) {
        let Body::Expose { proof } = &m.body else { return };
        let accused = proof.accused();
        let fresh = self.collateral.stash(&accused);
        if !fresh.is_empty() {
            self.emit(EngineEvent::Stash { round: r, accused: accused.into_iter().collect(), fresh });
        }
        let undecided = self.rounds.get(&r).is_none_or(|s| s.decided.is_none());
        if r == self.round && !self.halted && undecided {
            self.exit_round(ExitVia::Expose);
        }
    }

    // ---- view change -------------------------------------------------------

    fn on_timeout(&mut self) {
        let (r, phase) = (self.round, self.phase);
        self.emit(EngineEvent::Timeout { round: r, phase });
        if phase == Phase::Vote {
            let rs = self.rs(r);
            if !rs.sent_commit && !rs.vc_sent {
                rs.sent_commit = true;
                let m = self.sign(Body::Commit { value: Value::Bottom, proposal: None, votes: vec![] });
                self.broadcast(m);
            }
        }
        self.trigger_view_change();
    }

    fn trigger_view_change(&mut self) {
        let r = self.round;
        if self.halted {
            return;
        }
        let phase = self.phase;
        let rs = self.rs(r);
        if rs.vc_sent || rs.cv_sent {
            return;
        }
        rs.vc_sent = true;
        let m = self.sign(Body::ViewChange { phase });
        self.emit(EngineEvent::ViewChangeSent { round: r, phase });
        self.broadcast(m);
    }

    fn on_view_change(&mut self, m: &Message, att: Attestation) {
        let r = m.round;
        let me = self.id();
        let rs = self.rs(r);
        rs.vcs.entry(m.sender).or_insert(att);
        if m.sender != me {
            if let Some(cv) = rs.my_cv.clone() {
                self.out.actions.push(Action::SendTo(vec![m.sender], cv));
            }
        }
        if r != self.round || self.halted {
            return;
        }
        if m.sender == me {
            self.check_final(r);
            if r != self.round {
                return;
            }
        }
        let rs = &self.rounds[&r];
        if rs.vc_sent && !rs.cv_sent && rs.vcs.len() >= self.q() && rs.vcs.contains_key(&me) {
            let mut set: Vec<Attestation> = vec![rs.vcs[&me]];
            set.extend(rs.vcs.values().filter(|a| a.signer() != me).take(self.q() - 1).copied());
            self.send_commit_view(set);
        }
    }

    fn send_commit_view(&mut self, set: Vec<Attestation>) {
        let r = self.round;
        let m = self.sign(Body::CommitView { view_changes: set });
        let rs = self.rs(r);
        rs.cv_sent = true;
        rs.vc_sent = true;
        rs.my_cv = Some(m.clone());
        self.emit(EngineEvent::CommitViewSent { round: r });
        self.broadcast(m);
        self.set_phase(Phase::ViewChangeWait);
    }

    fn on_commit_view(&mut self, m: &Message, vcs: Vec<Attestation>) {
        let r = m.round;
        if !self.valid_cert(&vcs, Kind::ViewChange, r, Value::Bottom) {
            return self.drop_msg(m, "commit-view with invalid view-change set");
        }
        self.rs(r).cvs.insert(m.sender);
        if r != self.round || self.halted {
            return;
        }
        if !self.rounds[&r].cv_sent {
            self.send_commit_view(vcs);
        }
        let have = self.rounds[&r].cvs.len();
        let enough = if self.cfg.strict_step5 { have > self.q() } else { have >= self.q() };
        if enough {
            self.exit_round(ExitVia::ViewChange);
        }
    }
}

#[cfg(test)]
mod tests;
