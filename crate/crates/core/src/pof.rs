//! Proof-of-Fraud: conflict scanning over signature tables, proof
//! verification, and the collateral ledger that applies stashes.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::Registry;
use crate::encoding::{Decode, DecodeError, Encode, Reader};
use crate::message::{Attestation, Kind};
use crate::types::{PlayerId, Round};

/// Two attestations by one signer for the same round and kind on different
/// values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConflictPair {
    pub a: Attestation,
    pub b: Attestation,
}

impl ConflictPair {
    pub fn signer(&self) -> PlayerId {
        self.a.signer()
    }

    /// Structural check without signatures.
    pub fn is_conflict(&self) -> bool {
        let (x, y) = (&self.a.stmt, &self.b.stmt);
        x.signer == y.signer && x.kind == y.kind && x.round == y.round && x.value != y.value
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofOfFraud {
    pub round: Round,
    pub pairs: Vec<ConflictPair>,
}

impl ProofOfFraud {
    pub fn accused(&self) -> BTreeSet<PlayerId> {
        self.pairs.iter().map(|p| p.signer()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Appends pairs from `other` for signers not yet accused here.
    pub fn merge(&mut self, other: ProofOfFraud) {
        let mut have = self.accused();
        for p in other.pairs {
            if have.insert(p.signer()) {
                self.pairs.push(p);
            }
        }
    }
}

/// One round/phase worth of signatures. Row = one reporter's bundle,
/// column = signer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SigTable {
    pub kind: Kind,
    pub round: Round,
    pub rows: Vec<BTreeMap<PlayerId, Attestation>>,
}

/// A conflict found by [`scan_conflicts`]: rows `i` and `j` disagree on
/// column `col`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Hit {
    pub i: usize,
    pub j: usize,
    pub col: usize,
}

/// Pairwise row scan. For each ordered pair of rows, every column where both
/// rows hold differing entries is recorded once per column; the scan returns
/// as soon as `t0 + 1` distinct columns are implicated.
///
/// Absent entries (`None`) never conflict.
pub fn scan_conflicts<T: PartialEq>(rows: &[Vec<Option<T>>], t0: usize) -> Vec<Hit> {
    let mut hits = Vec::new();
    let mut seen = BTreeSet::new();
    let cols = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    for i in 0..rows.len() {
        for j in 0..rows.len() {
            if i == j {
                continue;
            }
            // Keep scanning after a hit. Jumping to the threshold check on
            // the first differing column would miss other signers that only
            // conflict between this same pair of rows.
            for col in 0..cols {
                if seen.contains(&col) {
                    continue;
                }
                let (a, b) = (rows[i].get(col), rows[j].get(col));
                if let (Some(Some(x)), Some(Some(y))) = (a, b) {
                    if x != y {
                        seen.insert(col);
                        hits.push(Hit { i, j, col });
                    }
                }
            }
            if seen.len() > t0 {
                return hits;
            }
        }
    }
    hits
}

/// Builds a proof from a signature table, scanning rows in order and signers
/// by ascending id.
pub fn construct_proof(table: &SigTable, t0: usize) -> ProofOfFraud {
    let signers: Vec<PlayerId> = table
        .rows
        .iter()
        .flat_map(|r| r.keys().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let grid: Vec<Vec<Option<_>>> = table
        .rows
        .iter()
        .map(|row| signers.iter().map(|s| row.get(s).map(|a| a.stmt.value)).collect())
        .collect();
    let pairs = scan_conflicts(&grid, t0)
        .into_iter()
        .map(|h| {
            let s = signers[h.col];
            ConflictPair { a: table.rows[h.i][&s], b: table.rows[h.j][&s] }
        })
        .collect();
    ProofOfFraud { round: table.round, pairs }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PofError {
    #[error("pair {0} does not verify")]
    BadSignature(usize),
    #[error("pair {0} is not a conflict")]
    NotConflict(usize),
    #[error("pair {0} is for round {1}, proof is for round {2}")]
    WrongRound(usize, Round, Round),
    #[error("only {got} accused, need at least {need}")]
    TooFew { got: usize, need: usize },
}

/// Accepts iff every pair verifies and at least `t0 + 1` players are accused.
pub fn verify_pof(pof: &ProofOfFraud, reg: &Registry, t0: usize) -> Result<BTreeSet<PlayerId>, PofError> {
    for (i, p) in pof.pairs.iter().enumerate() {
        if !p.is_conflict() {
            return Err(PofError::NotConflict(i));
        }
        if p.a.stmt.round != pof.round {
            return Err(PofError::WrongRound(i, p.a.stmt.round, pof.round));
        }
        if !p.a.verify(reg) || !p.b.verify(reg) {
            return Err(PofError::BadSignature(i));
        }
    }
    let accused = pof.accused();
    if accused.len() <= t0 {
        return Err(PofError::TooFew { got: accused.len(), need: t0 + 1 });
    }
    Ok(accused)
}

/// Per-player collateral. A stash zeroes the balance once and for all.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollateralLedger {
    balances: Vec<u64>,
    stashed: Vec<bool>,
}

impl CollateralLedger {
    pub fn new(n: usize, collateral: u64) -> Self {
        CollateralLedger { balances: vec![collateral; n], stashed: vec![false; n] }
    }

    /// Returns the players whose flag flipped in this call.
    pub fn stash(&mut self, guilty: &BTreeSet<PlayerId>) -> Vec<PlayerId> {
        let mut fresh = Vec::new();
        for p in guilty {
            let i = p.index();
            if i < self.stashed.len() && !self.stashed[i] {
                self.stashed[i] = true;
                self.balances[i] = 0;
                fresh.push(*p);
            }
        }
        fresh
    }

    pub fn is_stashed(&self, p: PlayerId) -> bool {
        self.stashed.get(p.index()).copied().unwrap_or(false)
    }

    pub fn balance(&self, p: PlayerId) -> u64 {
        self.balances.get(p.index()).copied().unwrap_or(0)
    }

    pub fn stashed_set(&self) -> BTreeSet<PlayerId> {
        (0..self.stashed.len()).filter(|&i| self.stashed[i]).map(|i| PlayerId(i as u32)).collect()
    }
}

impl Encode for ConflictPair {
    fn encode(&self, out: &mut Vec<u8>) {
        self.a.encode(out);
        self.b.encode(out);
    }
}

impl Decode for ConflictPair {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(ConflictPair { a: Attestation::decode(r)?, b: Attestation::decode(r)? })
    }
}

impl Encode for ProofOfFraud {
    fn encode(&self, out: &mut Vec<u8>) {
        self.round.encode(out);
        self.pairs.encode(out);
    }
}

impl Decode for ProofOfFraud {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(ProofOfFraud { round: u64::decode(r)?, pairs: Vec::decode(r)? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{setup, KeyPair, DEFAULT_KAPPA};
    use crate::encoding::Encode;
    use crate::message::Statement;
    use crate::types::{Digest, Value};

    fn att(k: &KeyPair, round: Round, v: u8) -> Attestation {
        let stmt = Statement {
            kind: Kind::Commit,
            signer: k.owner(),
            round,
            value: Value::Block(Digest([v; 32])),
            aux: Digest::default(),
        };
        Attestation { stmt, sig: k.sign(&stmt.to_bytes()) }
    }

    /// 5x5 table where every reporter sees `base`, except reporter 0 sees the
    /// alternative value for each listed signer.
    fn table(keys: &[KeyPair], flipped: &[usize]) -> SigTable {
        let rows = (0..5)
            .map(|rep| {
                keys.iter()
                    .enumerate()
                    .map(|(s, k)| {
                        let v = if rep == 0 && flipped.contains(&s) { 2 } else { 1 };
                        (k.owner(), att(k, 7, v))
                    })
                    .collect()
            })
            .collect();
        SigTable { kind: Kind::Commit, round: 7, rows }
    }

    #[test]
    fn no_conflicts_empty_proof() {
        let (_, keys) = setup(5, DEFAULT_KAPPA);
        assert!(construct_proof(&table(&keys, &[]), 1).is_empty());
    }

    #[test]
    fn two_double_signers_t0_1() {
        let (reg, keys) = setup(5, DEFAULT_KAPPA);
        let p = construct_proof(&table(&keys, &[2, 4]), 1);
        let want: BTreeSet<_> = [PlayerId(2), PlayerId(4)].into();
        assert_eq!(p.accused(), want);
        assert_eq!(verify_pof(&p, &reg, 1).unwrap(), want);
    }

    #[test]
    fn single_conflict_below_threshold() {
        let (reg, keys) = setup(5, DEFAULT_KAPPA);
        let p = construct_proof(&table(&keys, &[2]), 2);
        assert_eq!(p.pairs.len(), 1);
        assert_eq!(verify_pof(&p, &reg, 2), Err(PofError::TooFew { got: 1, need: 3 }));
    }

    #[test]
    fn tampered_pair_rejected() {
        let (reg, keys) = setup(5, DEFAULT_KAPPA);
        let mut p = construct_proof(&table(&keys, &[1, 3]), 1);
        p.pairs[0].b.sig.tag.0[0] ^= 1;
        assert_eq!(verify_pof(&p, &reg, 1), Err(PofError::BadSignature(0)));
    }

    #[test]
    fn forged_signer_rejected() {
        let (reg, keys) = setup(5, DEFAULT_KAPPA);
        let mut p = construct_proof(&table(&keys, &[1, 3]), 1);
        // Relabel a pair as if player 0 had signed it.
        p.pairs[0].a.stmt.signer = PlayerId(0);
        p.pairs[0].b.stmt.signer = PlayerId(0);
        assert!(verify_pof(&p, &reg, 1).is_err());
    }

    #[test]
    fn same_pair_of_rows_several_signers() {
        // Two rows disagreeing on every column: all columns must be found.
        let rows = vec![vec![Some(0u8), Some(0)], vec![Some(1), Some(1)]];
        let hits = scan_conflicts(&rows, 1);
        let cols: Vec<_> = hits.iter().map(|h| h.col).collect();
        assert_eq!(cols, vec![0, 1]);
    }

    #[test]
    fn stash_idempotent() {
        let mut l = CollateralLedger::new(5, 100);
        let g: BTreeSet<_> = [PlayerId(2), PlayerId(4)].into();
        assert_eq!(l.stash(&g), vec![PlayerId(2), PlayerId(4)]);
        let snap = l.clone();
        assert!(l.stash(&g).is_empty());
        assert_eq!(l, snap);
        assert_eq!(l.balance(PlayerId(2)), 0);
        assert_eq!(l.balance(PlayerId(1)), 100);
        assert!(l.stash(&BTreeSet::new()).is_empty());
    }
}
