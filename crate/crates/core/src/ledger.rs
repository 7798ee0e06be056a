//! Per-replica chain of agreed blocks, slotted by round.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Block, Digest, Round};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Tentative,
    Final,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub block: Block,
    pub status: Status,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("round {round} already final with {have:?}, refusing {got:?}")]
    Conflict { round: Round, have: Digest, got: Digest },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Ledger {
    slots: BTreeMap<Round, Entry>,
    final_txs: BTreeSet<u64>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a tentative block unless the round is already final.
    pub fn mark_tentative(&mut self, block: &Block) {
        self.slots.entry(block.round).or_insert_with(|| Entry {
            block: block.clone(),
            status: Status::Tentative,
        });
        if let Some(e) = self.slots.get_mut(&block.round) {
            if e.status == Status::Tentative && e.block.digest != block.digest {
                e.block = block.clone();
            }
        }
    }

    /// Finalizes `block` in its round. Re-finalizing the same block is a
    /// no-op; a different final block for the round is an error.
    pub fn finalize(&mut self, block: &Block) -> Result<bool, LedgerError> {
        if let Some(e) = self.slots.get(&block.round) {
            if e.status == Status::Final {
                if e.block.digest == block.digest {
                    return Ok(false);
                }
                return Err(LedgerError::Conflict {
                    round: block.round,
                    have: e.block.digest,
                    got: block.digest,
                });
            }
        }
        self.slots.insert(block.round, Entry { block: block.clone(), status: Status::Final });
        self.final_txs.extend(block.txs.iter().map(|t| t.id));
        Ok(true)
    }

    /// Drops a tentative entry for `round`; final entries are never removed.
    pub fn rollback(&mut self, round: Round) -> bool {
        if matches!(self.slots.get(&round), Some(e) if e.status == Status::Tentative) {
            self.slots.remove(&round);
            return true;
        }
        false
    }

    pub fn get(&self, round: Round) -> Option<&Entry> {
        self.slots.get(&round)
    }

    pub fn final_at(&self, round: Round) -> Option<&Block> {
        self.slots.get(&round).filter(|e| e.status == Status::Final).map(|e| &e.block)
    }

    /// Final blocks in round order; index = height.
    pub fn final_chain(&self) -> Vec<&Block> {
        self.slots.values().filter(|e| e.status == Status::Final).map(|e| &e.block).collect()
    }

    /// All blocks, tentative included, in round order.
    pub fn chain(&self) -> Vec<&Block> {
        self.slots.values().map(|e| &e.block).collect()
    }

    pub fn last_final_digest(&self) -> Option<Digest> {
        self.slots.values().rev().find(|e| e.status == Status::Final).map(|e| e.block.digest)
    }

    pub fn is_tx_final(&self, id: u64) -> bool {
        self.final_txs.contains(&id)
    }

    pub fn len_final(&self) -> usize {
        self.slots.values().filter(|e| e.status == Status::Final).count()
    }
}

/// `C^{⌊c}`: the chain with its last `c` blocks removed.
pub fn truncate<T: Clone>(chain: &[T], c: usize) -> Vec<T> {
    chain[..chain.len().saturating_sub(c)].to_vec()
}

/// True when `a` is a prefix of `b`.
pub fn is_prefix<T: PartialEq>(a: &[T], b: &[T]) -> bool {
    a.len() <= b.len() && a.iter().zip(b).all(|(x, y)| x == y)
}
