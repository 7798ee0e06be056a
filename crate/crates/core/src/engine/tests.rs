use super::*;
use crate::crypto::{setup, DEFAULT_KAPPA};
use crate::pof::{ConflictPair, ProofOfFraud};
use crate::types::genesis_digest;

fn txs(k: u64) -> Arc<Vec<(Round, Transaction)>> {
    Arc::new((0..k).map(|id| (0, Transaction { id, payload_size: 8, censored: false })).collect())
}

struct Rig {
    reps: Vec<Replica>,
    keys: Vec<KeyPair>,
    reg: Arc<Registry>,
    /// (to, msg) in FIFO order.
    inbox: VecDeque<(usize, Message)>,
    events: Vec<(usize, EngineEvent)>,
    sent: Vec<(usize, Message)>,
}

impl Rig {
    fn new(n: usize, t0: usize, ntx: u64, block_size: usize) -> Rig {
        let (reg, keys) = setup(n, DEFAULT_KAPPA);
        let (_, keys2) = setup(n, DEFAULT_KAPPA);
        let reg = Arc::new(reg);
        let pool = txs(ntx);
        let reps = keys
            .into_iter()
            .map(|k| {
                let mut cfg = EngineConfig::new(n, t0);
                cfg.block_size = block_size;
                Replica::new(cfg, k, reg.clone(), pool.clone())
            })
            .collect();
        Rig { reps, keys: keys2, reg, inbox: VecDeque::new(), events: vec![], sent: vec![] }
    }

    fn absorb(&mut self, from: usize, out: Output) {
        let n = self.reps.len();
        for a in out.actions {
            match a {
                Action::Broadcast(m) => {
                    self.sent.push((from, m.clone()));
                    for to in (0..n).filter(|&j| j != from) {
                        self.inbox.push_back((to, m.clone()));
                    }
                }
                Action::SendTo(to, m) => {
                    self.sent.push((from, m.clone()));
                    for p in to {
                        self.inbox.push_back((p.index(), m.clone()));
                    }
                }
                Action::ArmTimer { .. } => {}
            }
        }
        self.events.extend(out.events.into_iter().map(|e| (from, e)));
    }

    fn start(&mut self, who: &[usize]) {
        for &i in who {
            let out = self.reps[i].start(0);
            self.absorb(i, out);
        }
    }

    fn run(&mut self, blocked: &[usize]) {
        while let Some((to, m)) = self.inbox.pop_front() {
            if blocked.contains(&to) {
                continue;
            }
            let out = self.reps[to].deliver(1, m);
            self.absorb(to, out);
        }
    }

    fn feed(&mut self, i: usize, now: Tick, m: Message) -> Output {
        self.reps[i].deliver(now, m)
    }

    fn fire_timeout(&mut self, i: usize) {
        let token = self.reps[i].timer_live.expect("timer armed");
        let out = self.reps[i].timer(100, token);
        self.absorb(i, out);
    }

    fn sent_kind(&self, from: usize, kind: Kind) -> Vec<&Message> {
        self.sent.iter().filter(|(f, m)| *f == from && m.kind() == kind).map(|(_, m)| m).collect()
    }

    fn proposal(&self, r: Round, txs: Vec<Transaction>) -> (Block, Message) {
        let l = leader_of(r, self.reps.len()).index();
        let b = Block::new(r, PlayerId(l as u32), genesis_digest(), txs);
        let m = Message::sign(&self.keys[l], r, Body::Propose { block: b.clone() });
        (b, m)
    }

    fn vote(&self, who: usize, b: &Block, p: &Message) -> Message {
        Message::sign(&self.keys[who], b.round, Body::Vote { digest: b.digest, proposal: p.attestation() })
    }

    fn commit(&self, who: usize, b: &Block, p: &Message, voters: &[usize]) -> Message {
        let votes = voters.iter().map(|&v| self.vote(v, b, p).attestation()).collect();
        Message::sign(
            &self.keys[who],
            b.round,
            Body::Commit { value: Value::Block(b.digest), proposal: Some(p.attestation()), votes },
        )
    }

    fn reveal(&self, who: usize, b: &Block, p: &Message, committers: &[usize]) -> Message {
        let all: Vec<usize> = (0..self.reps.len()).collect();
        let commits = committers.iter().map(|&c| self.commit(c, b, p, &all).attestation()).collect();
        Message::sign(&self.keys[who], b.round, Body::Reveal { digest: b.digest, proposal: p.attestation(), commits })
    }
}

fn has_event(out: &Output, f: impl Fn(&EngineEvent) -> bool) -> bool {
    out.events.iter().any(f)
}

#[test]
fn leader_proposes_fifo_capped() {
    let mut rig = Rig::new(5, 1, 3, 2);
    rig.start(&[0]);
    let props = rig.sent_kind(0, Kind::Propose);
    assert_eq!(props.len(), 1);
    let Body::Propose { block } = &props[0].body else { unreachable!() };
    assert_eq!(block.tx_ids(), vec![0, 1]);
}

#[test]
fn non_leader_arms_timer_only() {
    let mut rig = Rig::new(5, 1, 3, 2);
    let out = rig.reps[1].start(0);
    assert!(out.actions.iter().all(|a| matches!(a, Action::ArmTimer { .. })));
    assert_eq!(out.actions.len(), 1);
}

#[test]
fn empty_mempool_empty_block() {
    let mut rig = Rig::new(5, 1, 0, 2);
    rig.start(&[0]);
    let Body::Propose { block } = &rig.sent_kind(0, Kind::Propose)[0].body else { unreachable!() };
    assert!(block.txs.is_empty());
}

#[test]
fn valid_propose_one_vote() {
    let mut rig = Rig::new(5, 1, 0, 2);
    rig.reps[1].start(0);
    let (_, p) = rig.proposal(0, vec![]);
    let out = rig.reps[1].deliver(1, p.clone());
    let votes = out.actions.iter().filter(|a| matches!(a, Action::Broadcast(m) if m.kind() == Kind::Vote)).count();
    assert_eq!(votes, 1);
    let out = rig.reps[1].deliver(2, p);
    assert!(!out.actions.iter().any(|a| matches!(a, Action::Broadcast(_))));
}

#[test]
fn bad_digest_no_vote() {
    let mut rig = Rig::new(5, 1, 0, 2);
    rig.reps[1].start(0);
    let (mut b, _) = rig.proposal(0, vec![]);
    b.digest = Digest([9; 32]);
    let p = Message::sign(&rig.keys[0], 0, Body::Propose { block: b });
    let out = rig.reps[1].deliver(1, p);
    assert!(out.actions.is_empty());
    assert!(has_event(&out, |e| matches!(e, EngineEvent::Dropped { .. })));
}

#[test]
fn equivocating_leader_triggers_view_change() {
    let mut rig = Rig::new(5, 1, 0, 2);
    rig.reps[1].start(0);
    let (_, p1) = rig.proposal(0, vec![]);
    let (_, p2) = rig.proposal(0, vec![Transaction { id: 77, payload_size: 1, censored: false }]);
    rig.reps[1].deliver(1, p1);
    let out = rig.reps[1].deliver(2, p2);
    assert!(out.actions.iter().any(|a| matches!(a, Action::Broadcast(m) if m.kind() == Kind::ViewChange)));
}

#[test]
fn vote_threshold_commits_once() {
    let mut rig = Rig::new(5, 1, 0, 2);
    rig.reps[4].start(0);
    let (b, p) = rig.proposal(0, vec![]);
    let mut commits = 0;
    for v in 0..3 {
        let out = rig.feed(4, 1, rig.vote(v, &b, &p));
        commits += out.actions.iter().filter(|a| matches!(a, Action::Broadcast(m) if m.kind() == Kind::Commit)).count();
    }
    assert_eq!(commits, 0, "3 votes are below n - t0 = 4");
    let out = rig.feed(4, 1, rig.vote(3, &b, &p));
    let c: Vec<_> = out
        .actions
        .iter()
        .filter_map(|a| match a {
            Action::Broadcast(m) if m.kind() == Kind::Commit => Some(m),
            _ => None,
        })
        .collect();
    assert_eq!(c.len(), 1);
    let Body::Commit { votes, .. } = &c[0].body else { unreachable!() };
    assert_eq!(votes.len(), 4);
    let out = rig.feed(4, 1, rig.vote(4, &b, &p));
    assert!(!out.actions.iter().any(|a| matches!(a, Action::Broadcast(m) if m.kind() == Kind::Commit)));
}

#[test]
fn split_votes_no_commit() {
    let mut rig = Rig::new(5, 1, 0, 2);
    rig.reps[4].start(0);
    let (b, p) = rig.proposal(0, vec![]);
    for v in 0..3 {
        rig.feed(4, 1, rig.vote(v, &b, &p));
    }
    assert!(rig.reps[4].rounds[&0].votes[&b.digest].len() == 3);
    assert!(!rig.reps[4].rounds[&0].sent_commit);
}

#[test]
fn short_vote_certificate_rejected() {
    let mut rig = Rig::new(5, 1, 0, 2);
    rig.reps[4].start(0);
    let (b, p) = rig.proposal(0, vec![]);
    let c = rig.commit(1, &b, &p, &[0, 1, 2]);
    let out = rig.feed(4, 1, c);
    assert!(has_event(&out, |e| matches!(e, EngineEvent::Dropped { reason, .. } if reason.contains("vote set"))));
}

#[test]
fn commit_threshold_reveals_and_marks_tentative() {
    let mut rig = Rig::new(5, 1, 0, 2);
    rig.reps[4].start(0);
    let (b, p) = rig.proposal(0, vec![]);
    rig.feed(4, 1, p.clone());
    let mut reveal = false;
    for c in 0..4 {
        let out = rig.feed(4, 1, rig.commit(c, &b, &p, &[0, 1, 2, 3]));
        reveal |= out.actions.iter().any(|a| matches!(a, Action::Broadcast(m) if m.kind() == Kind::Reveal));
    }
    assert!(reveal);
    assert_eq!(rig.reps[4].ledger().get(0).unwrap().status, crate::ledger::Status::Tentative);
}

#[test]
fn bottom_commits_never_reveal() {
    let mut rig = Rig::new(5, 1, 0, 2);
    rig.reps[4].start(0);
    for c in 0..4 {
        let m = Message::sign(&rig.keys[c], 0, Body::Commit { value: Value::Bottom, proposal: None, votes: vec![] });
        let out = rig.feed(4, 1, m);
        assert!(!out.actions.iter().any(|a| matches!(a, Action::Broadcast(m) if m.kind() == Kind::Reveal)));
    }
}

#[test]
fn reveals_lead_to_final() {
    let mut rig = Rig::new(5, 1, 0, 2);
    rig.reps[4].start(0);
    let (b, p) = rig.proposal(0, vec![]);
    rig.feed(4, 1, p.clone());
    let mut fin = 0;
    for r in 0..4 {
        let out = rig.feed(4, 1, rig.reveal(r, &b, &p, &[0, 1, 2, 3]));
        fin += out.actions.iter().filter(|a| matches!(a, Action::Broadcast(m) if m.kind() == Kind::Final)).count();
    }
    assert_eq!(fin, 1);
    assert_eq!(rig.reps[4].ledger().final_at(0).unwrap().digest, b.digest);
    assert_eq!(rig.reps[4].round(), 1);
}

fn bottom_commit(rig: &Rig, who: usize) -> Message {
    Message::sign(&rig.keys[who], 0, Body::Commit { value: Value::Bottom, proposal: None, votes: vec![] })
}

#[test]
fn two_double_signers_expose() {
    let mut rig = Rig::new(5, 1, 0, 2);
    rig.reps[4].start(0);
    let (b, p) = rig.proposal(0, vec![]);
    rig.feed(4, 1, p.clone());
    // Players 1 and 3 send a bottom commit here while their commits on b
    // circulate inside the reveal certificates.
    rig.feed(4, 1, bottom_commit(&rig, 1));
    rig.feed(4, 1, bottom_commit(&rig, 3));
    let mut exposed = false;
    for r in 0..4 {
        let out = rig.feed(4, 1, rig.reveal(r, &b, &p, &[0, 1, 2, 3]));
        exposed |= out.actions.iter().any(|a| matches!(a, Action::Broadcast(m) if m.kind() == Kind::Expose));
    }
    assert!(exposed);
    assert!(rig.reps[4].ledger().final_at(0).is_none());
    assert_eq!(rig.reps[4].collateral().stashed_set(), [PlayerId(1), PlayerId(3)].into());
}

#[test]
fn one_double_signer_still_final() {
    let mut rig = Rig::new(5, 1, 0, 2);
    rig.reps[4].start(0);
    let (b, p) = rig.proposal(0, vec![]);
    rig.feed(4, 1, p.clone());
    rig.feed(4, 1, bottom_commit(&rig, 1));
    for r in 0..4 {
        rig.feed(4, 1, rig.reveal(r, &b, &p, &[0, 1, 2, 3]));
    }
    assert!(rig.reps[4].ledger().final_at(0).is_some());
    assert!(rig.reps[4].collateral().stashed_set().is_empty());
}

#[test]
fn leader_equivocation_counts_as_double_signer() {
    let mut rig = Rig::new(5, 1, 0, 2);
    rig.reps[4].start(0);
    let (b, p) = rig.proposal(0, vec![]);
    let (b2, p2) = rig.proposal(0, vec![Transaction { id: 5, payload_size: 1, censored: false }]);
    rig.feed(4, 1, p.clone());
    rig.feed(4, 1, rig.commit(1, &b2, &p2, &[0, 1, 2, 3, 4]));
    for r in 0..4 {
        rig.feed(4, 1, rig.reveal(r, &b, &p, &[0, 1, 2, 3]));
    }
    // The b2 vote certificate also double-signs the voters, so only check
    // that the leader and the committer are among the accused.
    let stashed = rig.reps[4].collateral().stashed_set();
    assert!(stashed.contains(&PlayerId(0)) && stashed.contains(&PlayerId(1)));
}

fn final_msg(rig: &Rig, who: usize, b: &Block, p: &Message) -> Message {
    let all: Vec<usize> = (0..5).collect();
    let commits = (0..4).map(|c| rig.commit(c, b, p, &all).attestation()).collect();
    Message::sign(
        &rig.keys[who],
        b.round,
        Body::Final { digest: b.digest, proposal: p.attestation(), block: Some(b.clone()), commits },
    )
}

#[test]
fn finals_majority() {
    let mut rig = Rig::new(5, 1, 0, 2);
    rig.reps[4].start(0);
    let (b, p) = rig.proposal(0, vec![]);
    rig.feed(4, 1, final_msg(&rig, 0, &b, &p));
    rig.feed(4, 1, final_msg(&rig, 1, &b, &p));
    assert!(rig.reps[4].ledger().final_at(0).is_none(), "2 of 5 is not a majority");
    let out = rig.feed(4, 1, final_msg(&rig, 2, &b, &p));
    assert!(rig.reps[4].ledger().final_at(0).is_some());
    assert!(has_event(&out, |e| matches!(e, EngineEvent::Finalize { via: FinalVia::Finals, .. })));
    let own = out.actions.iter().filter(|a| matches!(a, Action::Broadcast(m) if m.kind() == Kind::Final)).count();
    assert_eq!(own, 1);
}

#[test]
fn no_duplicate_final_after_reveal_path() {
    let mut rig = Rig::new(5, 1, 0, 2);
    rig.reps[4].start(0);
    let (b, p) = rig.proposal(0, vec![]);
    rig.feed(4, 1, p.clone());
    for r in 0..4 {
        rig.feed(4, 1, rig.reveal(r, &b, &p, &[0, 1, 2, 3]));
    }
    for f in 0..3 {
        let out = rig.feed(4, 2, final_msg(&rig, f, &b, &p));
        assert!(!out.actions.iter().any(|a| matches!(a, Action::Broadcast(m) if m.kind() == Kind::Final)));
    }
}

fn expose_for(rig: &Rig, who: usize, guilty: &[usize]) -> Message {
    let (b, p) = rig.proposal(0, vec![]);
    let (b2, p2) = rig.proposal(0, vec![Transaction { id: 5, payload_size: 1, censored: false }]);
    let all = [0, 1, 2, 3, 4];
    let pairs = guilty
        .iter()
        .map(|&g| ConflictPair {
            a: rig.commit(g, &b, &p, &all).attestation(),
            b: rig.commit(g, &b2, &p2, &all).attestation(),
        })
        .collect();
    Message::sign(&rig.keys[who], 0, Body::Expose { proof: ProofOfFraud { round: 0, pairs } })
}

#[test]
fn valid_expose_stashes_and_skips() {
    let mut rig = Rig::new(5, 1, 0, 2);
    rig.reps[4].start(0);
    let out = rig.feed(4, 1, expose_for(&rig, 3, &[0, 2]));
    assert!(has_event(&out, |e| matches!(e, EngineEvent::RoundExit { via: ExitVia::Expose, .. })));
    assert_eq!(rig.reps[4].round(), 1);
    assert_eq!(rig.reps[4].collateral().stashed_set(), [PlayerId(0), PlayerId(2)].into());
    let out = rig.feed(4, 2, expose_for(&rig, 1, &[0, 2]));
    assert!(out.events.is_empty());
    assert_eq!(rig.reps[4].round(), 1);
}

#[test]
fn forged_expose_rejected() {
    let mut rig = Rig::new(5, 1, 0, 2);
    rig.reps[4].start(0);
    let mut m = expose_for(&rig, 3, &[0, 2]);
    if let Body::Expose { proof } = &mut m.body {
        proof.pairs[1].a.stmt.signer = PlayerId(1);
        proof.pairs[1].b.stmt.signer = PlayerId(1);
    }
    let m = Message::sign(&rig.keys[3], 0, m.body);
    let out = rig.feed(4, 1, m);
    assert!(has_event(&out, |e| matches!(e, EngineEvent::Dropped { .. })));
    assert_eq!(rig.reps[4].round(), 0);
    assert!(rig.reps[4].collateral().stashed_set().is_empty());
}

#[test]
fn timeouts_everywhere_change_view() {
    let mut rig = Rig::new(5, 1, 0, 2);
    // Leader 0 never starts; others time out in Propose.
    rig.start(&[1, 2, 3, 4]);
    for i in 1..5 {
        rig.fire_timeout(i);
    }
    rig.run(&[0]);
    for i in 1..5 {
        assert!(rig.reps[i].round() >= 1, "replica {i}");
        assert!(rig.events.iter().any(|(w, e)| *w == i && matches!(e, EngineEvent::RoundExit { via: ExitVia::ViewChange, .. })));
    }
}

#[test]
fn lone_view_change_is_harmless() {
    let mut rig = Rig::new(5, 1, 0, 2);
    rig.start(&[0, 1, 2, 3]);
    let vc = Message::sign(&rig.keys[4], 0, Body::ViewChange { phase: Phase::Propose });
    for i in 0..4 {
        rig.inbox.push_back((i, vc.clone()));
    }
    rig.run(&[4]);
    for i in 0..4 {
        assert!(rig.reps[i].ledger().final_at(0).is_some());
        assert!(!rig.events.iter().any(|(_, e)| matches!(e, EngineEvent::CommitViewSent { .. })));
    }
}

#[test]
fn commit_view_pulls_replica_forward() {
    let mut rig = Rig::new(5, 1, 0, 2);
    rig.reps[4].start(0);
    let (b, p) = rig.proposal(0, vec![]);
    rig.feed(4, 1, p.clone());
    for v in 0..4 {
        rig.feed(4, 1, rig.vote(v, &b, &p));
    }
    assert_eq!(rig.reps[4].phase(), Phase::Commit);
    let vcs: Vec<_> = (0..4)
        .map(|i| Message::sign(&rig.keys[i], 0, Body::ViewChange { phase: Phase::Commit }).attestation())
        .collect();
    for i in 0..4 {
        let cv = Message::sign(&rig.keys[i], 0, Body::CommitView { view_changes: vcs.clone() });
        rig.feed(4, 2, cv);
    }
    assert_eq!(rig.reps[4].round(), 1);
    assert!(rig.reps[4].ledger().final_at(0).is_none());
}

#[test]
fn honest_fifo_network_finalizes_every_round() {
    let mut rig = Rig::new(5, 1, 30, 2);
    for r in rig.reps.iter_mut() {
        r.cfg.max_rounds = 10;
    }
    rig.start(&[0, 1, 2, 3, 4]);
    rig.run(&[]);
    let chains: Vec<Vec<Digest>> = rig
        .reps
        .iter()
        .map(|r| r.ledger().final_chain().iter().map(|b| b.digest).collect())
        .collect();
    assert_eq!(chains[0].len(), 10);
    assert!(chains.iter().all(|c| *c == chains[0]));
    assert!(rig.reps.iter().all(|r| r.is_halted()));
    let _ = &rig.reg;
}
