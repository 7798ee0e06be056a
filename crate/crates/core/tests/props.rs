use proptest::prelude::*;

use prft_core::crypto::setup;
use prft_core::encoding::{Decode, Encode};
use prft_core::message::{Body, Message};
use prft_core::types::{Block, Digest, PlayerId, Transaction, Value};

fn txs() -> impl Strategy<Value = Vec<Transaction>> {
    prop::collection::vec(
        (any::<u64>(), 0u32..4096, any::<bool>()).prop_map(|(id, payload_size, censored)| Transaction {
            id,
            payload_size,
            censored,
        }),
        0..8,
    )
}

proptest! {
    #[test]
    fn message_round_trip(round in 0u64..1000, who in 0usize..5, parent in any::<[u8; 32]>(), txs in txs(), bottom in any::<bool>()) {
        let (reg, keys) = setup(5, 64);
        let block = Block::new(round, PlayerId(who as u32), Digest(parent), txs);
        let prop = Message::sign(&keys[who], round, Body::Propose { block: block.clone() });
        let commit = Message::sign(
            &keys[(who + 1) % 5],
            round,
            if bottom {
                Body::Commit { value: Value::Bottom, proposal: None, votes: vec![] }
            } else {
                Body::Vote { digest: block.digest, proposal: prop.attestation() }
            },
        );
        for m in [prop, commit] {
            let back = Message::from_bytes(&m.to_bytes()).unwrap();
            prop_assert!(back.verify(&reg));
            prop_assert_eq!(back, m);
        }
    }

    #[test]
    fn tampered_message_does_not_verify(round in 0u64..1000, txs in txs(), at in any::<prop::sample::Index>(), bit in 0u8..8) {
        let (reg, keys) = setup(4, 64);
        let block = Block::new(round, PlayerId(0), Digest::default(), txs);
        let m = Message::sign(&keys[0], round, Body::Propose { block });
        let mut bytes = m.to_bytes();
        let i = at.index(bytes.len());
        bytes[i] ^= 1 << bit;
        if let Ok(back) = Message::from_bytes(&bytes) {
            prop_assert!(!back.verify(&reg) || back == m);
        }
    }

    #[test]
    fn block_digest_tracks_contents(round in 0u64..100, txs in txs(), extra in any::<u64>()) {
        let a = Block::new(round, PlayerId(1), Digest::default(), txs.clone());
        prop_assert!(a.is_well_formed());
        let mut b = a.clone();
        b.txs.push(Transaction { id: extra, payload_size: 1, censored: false });
        prop_assert!(!b.is_well_formed());
    }
}
