//! Domain vocabulary shared by every module: players, transactions, blocks,
//! digests and the system-state labels used by the utility model.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::encoding::{DecodeError, Decode, Encode, Reader};

/// Protocol round number.
pub type Round = u64;

/// Simulation time in integer ticks.
pub type Tick = u64;

/// Index of a player in `[0, n)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PlayerId(pub u32);

impl PlayerId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for PlayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// Leader of `round` among `n` players.
///
/// This is the 0-based form of the usual `1 + (r mod n)` rotation.
pub fn leader_of(round: Round, n: usize) -> PlayerId {
    assert!(n >= 1, "leader_of requires at least one player");
    PlayerId((round % n as u64) as u32)
}

/// `⌈n/4⌉ − 1`, the default byzantine tolerance of the protocol.
pub fn default_t0(n: usize) -> usize {
    n.div_ceil(4).saturating_sub(1)
}

/// 32-byte SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn of(bytes: &[u8]) -> Self {
        Digest(Sha256::digest(bytes).into())
    }

    pub fn of_parts(parts: &[&[u8]]) -> Self {
        let mut h = Sha256::new();
        for p in parts {
            h.update((p.len() as u32).to_le_bytes());
            h.update(p);
        }
        Digest(h.finalize().into())
    }

    pub fn short(&self) -> String {
        hex::encode(&self.0[..6])
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("digest must be 32 bytes"))?;
        Ok(Digest(arr))
    }
}

/// A voted-on value: either a block digest or the empty value ⊥.
///
/// ⊥ is its own variant rather than a reserved digest so it can never
/// collide with a real block hash.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Value {
    Bottom,
    Block(Digest),
}

impl Value {
    pub fn digest(self) -> Option<Digest> {
        match self {
            Value::Bottom => None,
            Value::Block(d) => Some(d),
        }
    }

    pub fn is_bottom(self) -> bool {
        matches!(self, Value::Bottom)
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bottom => f.write_str("⊥"),
            Value::Block(d) => write!(f, "{d:?}"),
        }
    }
}

impl From<Digest> for Value {
    fn from(d: Digest) -> Self {
        Value::Block(d)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Honest,
    Byzantine,
    Rational,
}

/// Player type θ for rational players.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Theta(u8);

impl Theta {
    pub const ZERO: Theta = Theta(0);
    pub const ONE: Theta = Theta(1);
    pub const TWO: Theta = Theta(2);
    pub const THREE: Theta = Theta(3);

    pub fn new(v: u8) -> Option<Self> {
        (v <= 3).then_some(Theta(v))
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for Theta {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        Theta::new(v).ok_or_else(|| format!("theta must be in 0..=3, got {v}"))
    }
}

impl From<Theta> for u8 {
    fn from(t: Theta) -> u8 {
        t.0
    }
}

/// Role assignment of one player. θ is only meaningful for rational players.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlayerRole {
    pub role: Role,
    pub theta: Theta,
}

impl PlayerRole {
    pub fn honest() -> Self {
        PlayerRole { role: Role::Honest, theta: Theta::ZERO }
    }

    pub fn byzantine() -> Self {
        PlayerRole { role: Role::Byzantine, theta: Theta::THREE }
    }

    pub fn rational(theta: Theta) -> Self {
        PlayerRole { role: Role::Rational, theta }
    }
}

/// Effective θ of a rational population: the maximum over its members.
pub fn effective_theta(roles: &[PlayerRole]) -> Option<Theta> {
    roles
        .iter()
        .filter(|r| r.role == Role::Rational)
        .map(|r| r.theta)
        .max()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Transaction {
    pub id: u64,
    pub payload_size: u32,
    pub censored: bool,
}

/// A proposed block. `digest` is derived and always recomputable.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Block {
    pub round: Round,
    pub proposer: PlayerId,
    pub parent_digest: Digest,
    pub txs: Vec<Transaction>,
    pub digest: Digest,
}

impl Block {
    pub fn new(round: Round, proposer: PlayerId, parent_digest: Digest, txs: Vec<Transaction>) -> Self {
        let digest = block_digest_of(round, proposer, &parent_digest, &txs);
        Block { round, proposer, parent_digest, txs, digest }
    }

    /// True when the stored digest matches the block contents.
    pub fn is_well_formed(&self) -> bool {
        block_digest(self) == self.digest
    }

    pub fn tx_ids(&self) -> Vec<u64> {
        self.txs.iter().map(|t| t.id).collect()
    }
}

/// Digest of the block contents bound to its round.
pub fn block_digest(block: &Block) -> Digest {
    block_digest_of(block.round, block.proposer, &block.parent_digest, &block.txs)
}

fn block_digest_of(round: Round, proposer: PlayerId, parent: &Digest, txs: &[Transaction]) -> Digest {
    let mut body = Vec::with_capacity(48 + txs.len() * 13);
    parent.encode(&mut body);
    proposer.encode(&mut body);
    txs.to_vec().encode(&mut body);
    let mut buf = Vec::with_capacity(body.len() + 16);
    buf.extend_from_slice(b"pRFT/block");
    body.encode(&mut buf);
    round.encode(&mut buf);
    Digest::of(&buf)
}

/// Parent digest used by the first block of every chain.
pub fn genesis_digest() -> Digest {
    Digest::of(b"pRFT/genesis")
}

/// Realized system state over an evaluation window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SystemState {
    /// No new blocks were confirmed.
    NoProgress,
    /// Blocks were confirmed but a censored transaction was kept out.
    ConditionalProgress,
    /// Two honest players confirmed different blocks at the same height.
    Fork,
    /// Honest execution.
    Honest,
}

impl SystemState {
    pub const ALL: [SystemState; 4] = [
        SystemState::NoProgress,
        SystemState::ConditionalProgress,
        SystemState::Fork,
        SystemState::Honest,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SystemState::NoProgress => "NP",
            SystemState::ConditionalProgress => "CP",
            SystemState::Fork => "Fork",
            SystemState::Honest => "HonestExec",
        }
    }
}

// ---- canonical encodings ------------------------------------------------

impl Encode for PlayerId {
    fn encode(&self, out: &mut Vec<u8>) {
        self.0.encode(out)
    }
}

impl Decode for PlayerId {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(PlayerId(u32::decode(r)?))
    }
}

impl Encode for Digest {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.0)
    }
}

impl Decode for Digest {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Digest(r.array::<32>()?))
    }
}

impl Encode for Value {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            Value::Bottom => out.push(0),
            Value::Block(d) => {
                out.push(1);
                d.encode(out);
            }
        }
    }
}

impl Decode for Value {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.u8()? {
            0 => Ok(Value::Bottom),
            1 => Ok(Value::Block(Digest::decode(r)?)),
            t => Err(DecodeError::BadTag { what: "value", tag: t }),
        }
    }
}

impl Encode for Transaction {
    fn encode(&self, out: &mut Vec<u8>) {
        self.id.encode(out);
        self.payload_size.encode(out);
        self.censored.encode(out);
    }
}

impl Decode for Transaction {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Transaction {
            id: u64::decode(r)?,
            payload_size: u32::decode(r)?,
            censored: bool::decode(r)?,
        })
    }
}

impl Encode for Block {
    fn encode(&self, out: &mut Vec<u8>) {
        self.round.encode(out);
        self.proposer.encode(out);
        self.parent_digest.encode(out);
        self.txs.encode(out);
        self.digest.encode(out);
    }
}

impl Decode for Block {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Block {
            round: u64::decode(r)?,
            proposer: PlayerId::decode(r)?,
            parent_digest: Digest::decode(r)?,
            txs: Vec::decode(r)?,
            digest: Digest::decode(r)?,
        })
    }
}
