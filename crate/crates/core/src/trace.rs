//! Run traces: a header describing the run, the event log, and a footer.
//!
//! The line-delimited form is one JSON object per line: `{"header":...}`,
//! then one object per event, then `{"footer":...}`. The trace hash is the
//! SHA-256 of exactly those bytes.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::engine::EngineEvent;
use crate::message::Kind;
use crate::types::{Digest, PlayerId, Role, Round, Theta, Tick, Transaction};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlayerInfo {
    pub id: PlayerId,
    pub role: Role,
    pub theta: Theta,
    pub strategy: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxInput {
    /// First round in which the transaction is available to proposers.
    pub round: Round,
    pub tx: Transaction,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
    pub n: usize,
    pub t0: usize,
    pub max_rounds: Round,
    pub delta: Tick,
    pub kappa: usize,
    /// Global stabilization time when the network is partially synchronous.
    pub gst: Option<Tick>,
    pub players: Vec<PlayerInfo>,
    pub txs: Vec<TxInput>,
}

impl TraceHeader {
    pub fn honest(&self) -> Vec<PlayerId> {
        self.players.iter().filter(|p| p.role == Role::Honest).map(|p| p.id).collect()
    }

    pub fn censored(&self) -> Vec<TxInput> {
        self.txs.iter().filter(|t| t.tx.censored).copied().collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "snake_case")]
pub enum Event {
    /// One send action. `to = None` means every player but the sender.
    /// `bytes` is the size of one copy.
    Send { from: PlayerId, to: Option<Vec<PlayerId>>, kind: Kind, round: Round, digest: Option<Digest>, bytes: u64 },
    Deliver { from: PlayerId, to: PlayerId, kind: Kind, round: Round },
    Engine { player: PlayerId, event: EngineEvent },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time: Tick,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceFooter {
    pub truncated: bool,
    pub end_time: Tick,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunTrace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
    pub footer: TraceFooter,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("missing {0}")]
    Missing(&'static str),
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Frame {
    Header(TraceHeader),
    Footer(TraceFooter),
}

struct HashWriter(Sha256);

impl Write for HashWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl RunTrace {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        let header = Frame::Header(self.header.clone());
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        serde_json::to_writer(&mut w, &Frame::Footer(self.footer))?;
        w.write_all(b"\n")
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<RunTrace, TraceError> {
        let mut header = None;
        let mut footer = None;
        let mut events = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let json = |e| TraceError::Json { line: i + 1, source: e };
            if i == 0 {
                match serde_json::from_str(&line).map_err(json)? {
                    Frame::Header(h) => header = Some(h),
                    Frame::Footer(_) => return Err(TraceError::Missing("header")),
                }
            } else if line.starts_with("{\"footer\"") {
                if let Frame::Footer(f) = serde_json::from_str(&line).map_err(json)? {
                    footer = Some(f);
                }
            } else {
                events.push(serde_json::from_str(&line).map_err(json)?);
            }
        }
        Ok(RunTrace {
            header: header.ok_or(TraceError::Missing("header"))?,
            events,
            footer: footer.ok_or(TraceError::Missing("footer"))?,
        })
    }

    pub fn from_jsonl(s: &str) -> Result<RunTrace, TraceError> {
        Self::read_jsonl(s.as_bytes())
    }

    /// SHA-256 of the line-delimited form, hex encoded.
    pub fn hash(&self) -> String {
        let mut w = HashWriter(Sha256::new());
        self.write_jsonl(&mut w).expect("hashing never fails");
        hex::encode(w.0.finalize())
    }

    /// Engine events of honest players, with their time.
    pub fn honest_engine_events(&self) -> impl Iterator<Item = (Tick, PlayerId, &EngineEvent)> + '_ {
        let honest = self.header.honest();
        self.events.iter().filter_map(move |e| match &e.event {
            Event::Engine { player, event } if honest.contains(player) => Some((e.time, *player, event)),
            _ => None,
        })
    }
}
