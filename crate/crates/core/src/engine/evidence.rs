//! Per-round signature tables feeding the fraud-proof scan.

use std::collections::{BTreeMap, BTreeSet};

use crate::message::{Attestation, Kind};
use crate::pof::{construct_proof, ConflictPair, ProofOfFraud, SigTable};
use crate::types::{PlayerId, Round, Value};

#[derive(Clone, Debug, Default)]
struct Table {
    rows: Vec<BTreeMap<PlayerId, Attestation>>,
    direct: Option<usize>,
    values: BTreeMap<PlayerId, BTreeMap<Value, Attestation>>,
}

impl Table {
    fn knows(&self, a: &Attestation) -> bool {
        self.values.get(&a.signer()).is_some_and(|m| m.contains_key(&a.stmt.value))
    }

    fn note(&mut self, a: Attestation) {
        self.values.entry(a.signer()).or_default().entry(a.stmt.value).or_insert(a);
    }
}

/// Signatures observed for one round, grouped by message kind.
///
/// Rows come from certificates relayed by other players (a Commit's vote
/// set, a Reveal's commit set, ...) plus one row of messages received
/// directly. A bundle that adds no new (signer, value) entry is skipped; any
/// conflict it could expose is already visible through the rows that hold
/// the same entries.
#[derive(Clone, Debug, Default)]
pub struct Evidence {
    tables: BTreeMap<Kind, Table>,
}

impl Evidence {
    /// Adds one reporter's bundle. Returns true if it carried anything new.
    pub fn add_bundle<I: IntoIterator<Item = Attestation>>(&mut self, kind: Kind, atts: I) -> bool {
        let t = self.tables.entry(kind).or_default();
        let row: BTreeMap<PlayerId, Attestation> = atts.into_iter().map(|a| (a.signer(), a)).collect();
        if row.values().all(|a| t.knows(a)) {
            return false;
        }
        for a in row.values() {
            t.note(*a);
        }
        t.rows.push(row);
        true
    }

    /// Adds a message received directly from its signer.
    pub fn add_direct(&mut self, a: Attestation) -> bool {
        let t = self.tables.entry(a.stmt.kind).or_default();
        if t.knows(&a) {
            return false;
        }
        t.note(a);
        let idx = match t.direct {
            Some(i) => i,
            None => {
                t.rows.push(BTreeMap::new());
                t.direct = Some(t.rows.len() - 1);
                t.rows.len() - 1
            }
        };
        if t.rows[idx].contains_key(&a.signer()) {
            // A second, different value straight from the same signer.
            t.rows.push([(a.signer(), a)].into());
        } else {
            t.rows[idx].insert(a.signer(), a);
        }
        true
    }

    /// Distinct values signed by `signer` for `kind`.
    pub fn values_of(&self, kind: Kind, signer: PlayerId) -> usize {
        self.tables.get(&kind).and_then(|t| t.values.get(&signer)).map_or(0, |m| m.len())
    }

    /// Every signer seen signing two values of one kind.
    pub fn conflicting(&self) -> BTreeSet<PlayerId> {
        self.tables
            .values()
            .flat_map(|t| t.values.iter().filter(|(_, v)| v.len() > 1).map(|(p, _)| *p))
            .collect()
    }

    /// Union over kinds of the accused sets found by the table scan.
    pub fn scan(&self, round: Round, t0: usize) -> BTreeSet<PlayerId> {
        let mut out = BTreeSet::new();
        for (kind, t) in &self.tables {
            let table = SigTable { kind: *kind, round, rows: t.rows.clone() };
            out.extend(construct_proof(&table, t0).accused());
        }
        out
    }

    /// One conflict pair for every conflicting signer and kind.
    pub fn full_proof(&self, round: Round) -> ProofOfFraud {
        let mut pairs = Vec::new();
        let mut seen = BTreeSet::new();
        for t in self.tables.values() {
            for (p, vals) in &t.values {
                if vals.len() > 1 && seen.insert(*p) {
                    let mut it = vals.values();
                    let (a, b) = (*it.next().unwrap(), *it.next().unwrap());
                    pairs.push(ConflictPair { a, b });
                }
            }
        }
        ProofOfFraud { round, pairs }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{setup, KeyPair, DEFAULT_KAPPA};
    use crate::encoding::Encode;
    use crate::message::Statement;
    use crate::types::Digest;

    fn vote(k: &KeyPair, v: u8) -> Attestation {
        let stmt = Statement {
            kind: Kind::Vote,
            signer: k.owner(),
            round: 1,
            value: Value::Block(Digest([v; 32])),
            aux: Digest::default(),
        };
        Attestation { stmt, sig: k.sign(&stmt.to_bytes()) }
    }

    #[test]
    fn direct_conflict_detected() {
        let (_, keys) = setup(4, DEFAULT_KAPPA);
        let mut e = Evidence::default();
        assert!(e.add_direct(vote(&keys[1], 1)));
        assert!(!e.add_direct(vote(&keys[1], 1)));
        assert!(e.add_direct(vote(&keys[1], 2)));
        assert_eq!(e.conflicting(), [PlayerId(1)].into());
        assert_eq!(e.scan(1, 0), [PlayerId(1)].into());
        assert_eq!(e.full_proof(1).pairs.len(), 1);
    }

    #[test]
    fn bundle_vs_direct() {
        let (_, keys) = setup(4, DEFAULT_KAPPA);
        let mut e = Evidence::default();
        for k in &keys {
            e.add_direct(vote(k, 1));
        }
        assert!(!e.add_bundle(Kind::Vote, keys.iter().map(|k| vote(k, 1))));
        assert!(e.add_bundle(Kind::Vote, keys[..2].iter().map(|k| vote(k, 2))));
        assert_eq!(e.scan(1, 1), [PlayerId(0), PlayerId(1)].into());
    }
}
