//! Deterministic simulator for the pRFT rational-consensus protocol.
//!
//! The crate is layered bottom-up: [`types`], [`encoding`], [`crypto`] and
//! [`message`] define the vocabulary; [`engine`] is the replica state
//! machine; [`pof`] handles fraud proofs and collateral; [`adversary`] drives
//! deviating players; [`netsim`] runs a seeded discrete-event network;
//! [`gametheory`] and [`harness`] analyse the resulting traces.

pub mod adversary;
pub mod crypto;
pub mod encoding;
pub mod engine;
pub mod gametheory;
pub mod harness;
pub mod ledger;
pub mod message;
pub mod netsim;
pub mod pof;
pub mod trace;
pub mod types;
