//! Wire vocabulary.
//!
//! Every message is signed over a [`Statement`]: kind, signer, round, the
//! voted value, and `aux`, a digest of the full body. The (statement,
//! signature) pair is an [`Attestation`], which verifies on its own and is
//! what certificates and fraud proofs embed.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::crypto::{KeyPair, Registry, Signature, ENC_SIG_LEN};
use crate::encoding::{Decode, DecodeError, Encode, Reader};
use crate::pof::ProofOfFraud;
use crate::types::{Block, Digest, PlayerId, Round, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Kind {
    Propose,
    Vote,
    Commit,
    Reveal,
    Expose,
    Final,
    ViewChange,
    CommitView,
}

impl Kind {
    pub const ALL: [Kind; 8] = [
        Kind::Propose,
        Kind::Vote,
        Kind::Commit,
        Kind::Reveal,
        Kind::Expose,
        Kind::Final,
        Kind::ViewChange,
        Kind::CommitView,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::Propose => "propose",
            Kind::Vote => "vote",
            Kind::Commit => "commit",
            Kind::Reveal => "reveal",
            Kind::Expose => "expose",
            Kind::Final => "final",
            Kind::ViewChange => "view-change",
            Kind::CommitView => "commit-view",
        }
    }

    fn tag(self) -> u8 {
        Kind::ALL.iter().position(|k| *k == self).unwrap() as u8
    }
}

/// Phase of a round at one replica.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Propose,
    Vote,
    Commit,
    Reveal,
    ViewChangeWait,
}

impl Phase {
    const ALL: [Phase; 5] =
        [Phase::Propose, Phase::Vote, Phase::Commit, Phase::Reveal, Phase::ViewChangeWait];
}

/// The signed content of a message.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Statement {
    pub kind: Kind,
    pub signer: PlayerId,
    pub round: Round,
    pub value: Value,
    pub aux: Digest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Attestation {
    pub stmt: Statement,
    pub sig: Signature,
}

impl Attestation {
    pub fn verify(&self, reg: &Registry) -> bool {
        self.sig.signer == self.stmt.signer && reg.verify(&self.sig, &self.stmt.to_bytes())
    }

    pub fn signer(&self) -> PlayerId {
        self.stmt.signer
    }

    /// True when this is a `kind` attestation for `round` on `value`.
    pub fn is(&self, kind: Kind, round: Round, value: Value) -> bool {
        self.stmt.kind == kind && self.stmt.round == round && self.stmt.value == value
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Body {
    Propose { block: Block },
    Vote { digest: Digest, proposal: Attestation },
    Commit { value: Value, proposal: Option<Attestation>, votes: Vec<Attestation> },
    Reveal { digest: Digest, proposal: Attestation, commits: Vec<Attestation> },
    Expose { proof: ProofOfFraud },
    /// `block` and `commits` make the message self-certifying so replicas
    /// that left the round early can still adopt the decided block.
    Final { digest: Digest, proposal: Attestation, block: Option<Block>, commits: Vec<Attestation> },
    ViewChange { phase: Phase },
    CommitView { view_changes: Vec<Attestation> },
}

impl Body {
    pub fn kind(&self) -> Kind {
        match self {
            Body::Propose { .. } => Kind::Propose,
            Body::Vote { .. } => Kind::Vote,
            Body::Commit { .. } => Kind::Commit,
            Body::Reveal { .. } => Kind::Reveal,
            Body::Expose { .. } => Kind::Expose,
            Body::Final { .. } => Kind::Final,
            Body::ViewChange { .. } => Kind::ViewChange,
            Body::CommitView { .. } => Kind::CommitView,
        }
    }

    pub fn value(&self) -> Value {
        match self {
            Body::Propose { block } => Value::Block(block.digest),
            Body::Vote { digest, .. } | Body::Reveal { digest, .. } | Body::Final { digest, .. } => {
                Value::Block(*digest)
            }
            Body::Commit { value, .. } => *value,
            Body::Expose { .. } | Body::ViewChange { .. } | Body::CommitView { .. } => Value::Bottom,
        }
    }

    /// Number of signatures carried inside the body.
    pub fn embedded_signatures(&self) -> usize {
        match self {
            Body::Propose { .. } | Body::ViewChange { .. } => 0,
            Body::Vote { .. } => 1,
            Body::Commit { proposal, votes, .. } => proposal.is_some() as usize + votes.len(),
            Body::Reveal { commits, .. } => 1 + commits.len(),
            Body::Final { commits, .. } => 1 + commits.len(),
            Body::Expose { proof } => 2 * proof.pairs.len(),
            Body::CommitView { view_changes } => view_changes.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message {
    pub round: Round,
    pub sender: PlayerId,
    pub body: Body,
    pub sig: Signature,
}

impl Message {
    pub fn sign(key: &KeyPair, round: Round, body: Body) -> Message {
        let stmt = statement_of(key.owner(), round, &body);
        let sig = key.sign(&stmt.to_bytes());
        Message { round, sender: key.owner(), body, sig }
    }

    pub fn kind(&self) -> Kind {
        self.body.kind()
    }

    pub fn statement(&self) -> Statement {
        statement_of(self.sender, self.round, &self.body)
    }

    pub fn attestation(&self) -> Attestation {
        Attestation { stmt: self.statement(), sig: self.sig }
    }

    /// Outer signature check; embedded certificates are validated by the
    /// handlers that consume them.
    pub fn verify(&self, reg: &Registry) -> bool {
        self.attestation().verify(reg)
    }

    /// Wire size with every signature counted as `kappa` bytes.
    pub fn wire_size(&self, kappa: usize) -> usize {
        let sigs = 1 + self.body.embedded_signatures();
        self.to_bytes().len() - sigs * ENC_SIG_LEN + sigs * kappa
    }
}

fn statement_of(signer: PlayerId, round: Round, body: &Body) -> Statement {
    Statement {
        kind: body.kind(),
        signer,
        round,
        value: body.value(),
        aux: Digest::of(&body.to_bytes()),
    }
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{} r{} {:?}]", self.kind().name(), self.sender, self.round, self.body.value())
    }
}

// ---- codecs --------------------------------------------------------------

impl Encode for Kind {
    fn encode(&self, out: &mut Vec<u8>) {
        out.push(self.tag())
    }
}

impl Decode for Kind {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let t = r.u8()?;
        Kind::ALL.get(t as usize).copied().ok_or(DecodeError::BadTag { what: "kind", tag: t })
    }
}

impl Encode for Phase {
    fn encode(&self, out: &mut Vec<u8>) {
        out.push(Phase::ALL.iter().position(|p| p == self).unwrap() as u8)
    }
}

impl Decode for Phase {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let t = r.u8()?;
        Phase::ALL.get(t as usize).copied().ok_or(DecodeError::BadTag { what: "phase", tag: t })
    }
}

impl Encode for Statement {
    fn encode(&self, out: &mut Vec<u8>) {
        self.kind.encode(out);
        self.signer.encode(out);
        self.round.encode(out);
        self.value.encode(out);
        self.aux.encode(out);
    }
}

impl Decode for Statement {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Statement {
            kind: Kind::decode(r)?,
            signer: PlayerId::decode(r)?,
            round: u64::decode(r)?,
            value: Value::decode(r)?,
            aux: Digest::decode(r)?,
        })
    }
}

impl Encode for Attestation {
    fn encode(&self, out: &mut Vec<u8>) {
        self.stmt.encode(out);
        self.sig.encode(out);
    }
}

impl Decode for Attestation {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Attestation { stmt: Statement::decode(r)?, sig: Signature::decode(r)? })
    }
}

impl Encode for Body {
    fn encode(&self, out: &mut Vec<u8>) {
        self.kind().encode(out);
        match self {
            Body::Propose { block } => block.encode(out),
            Body::Vote { digest, proposal } => {
                digest.encode(out);
                proposal.encode(out);
            }
            Body::Commit { value, proposal, votes } => {
                value.encode(out);
                proposal.encode(out);
                votes.encode(out);
            }
            Body::Reveal { digest, proposal, commits } => {
                digest.encode(out);
                proposal.encode(out);
                commits.encode(out);
            }
            Body::Expose { proof } => proof.encode(out),
            Body::Final { digest, proposal, block, commits } => {
                digest.encode(out);
                proposal.encode(out);
                block.encode(out);
                commits.encode(out);
            }
            Body::ViewChange { phase } => phase.encode(out),
            Body::CommitView { view_changes } => view_changes.encode(out),
        }
    }
}

impl Decode for Body {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(match Kind::decode(r)? {
            Kind::Propose => Body::Propose { block: Block::decode(r)? },
            Kind::Vote => Body::Vote { digest: Digest::decode(r)?, proposal: Attestation::decode(r)? },
            Kind::Commit => Body::Commit {
                value: Value::decode(r)?,
                proposal: Option::decode(r)?,
                votes: Vec::decode(r)?,
            },
            Kind::Reveal => Body::Reveal {
                digest: Digest::decode(r)?,
                proposal: Attestation::decode(r)?,
                commits: Vec::decode(r)?,
            },
            Kind::Expose => Body::Expose { proof: ProofOfFraud::decode(r)? },
            Kind::Final => Body::Final {
                digest: Digest::decode(r)?,
                proposal: Attestation::decode(r)?,
                block: Option::decode(r)?,
                commits: Vec::decode(r)?,
            },
            Kind::ViewChange => Body::ViewChange { phase: Phase::decode(r)? },
            Kind::CommitView => Body::CommitView { view_changes: Vec::decode(r)? },
        })
    }
}

impl Encode for Message {
    fn encode(&self, out: &mut Vec<u8>) {
        self.round.encode(out);
        self.sender.encode(out);
        self.body.encode(out);
        self.sig.encode(out);
    }
}

impl Decode for Message {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Message {
            round: u64::decode(r)?,
            sender: PlayerId::decode(r)?,
            body: Body::decode(r)?,
            sig: Signature::decode(r)?,
        })
    }
}
