//! Simulated PKI.
//!
//! A signature tag is `H(secret ‖ H(bytes))`. Secrets never leave the
//! [`KeyPair`] handed to their owner and the [`Registry`] used as the
//! verification oracle, so a strategy can only sign for keys it was given.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{Decode, DecodeError, Encode, Reader};
use crate::types::{Digest, PlayerId};

/// Default nominal signature size in bytes used for wire accounting.
pub const DEFAULT_KAPPA: usize = 64;

/// Encoded length of a [`Signature`] (signer + digest + tag).
pub const ENC_SIG_LEN: usize = 4 + 32 + 32;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub struct Signature {
    pub signer: PlayerId,
    pub digest: Digest,
    pub tag: Digest,
}

#[derive(Clone)]
pub struct KeyPair {
    owner: PlayerId,
    secret: [u8; 32],
}

impl KeyPair {
    pub fn owner(&self) -> PlayerId {
        self.owner
    }

    pub fn sign(&self, bytes: &[u8]) -> Signature {
        let digest = Digest::of(bytes);
        Signature { signer: self.owner, digest, tag: tag_of(&self.secret, &digest) }
    }
}

impl std::fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyPair").field("owner", &self.owner).finish_non_exhaustive()
    }
}

fn tag_of(secret: &[u8; 32], digest: &Digest) -> Digest {
    Digest::of_parts(&[b"pRFT/sig", secret, &digest.0])
}

/// Verification side of the trusted setup. Keys are fixed after [`setup`];
/// signatures that verified once are remembered with their signed bytes.
pub struct Registry {
    secrets: Vec<[u8; 32]>,
    kappa: usize,
    seen: Mutex<HashMap<Signature, Vec<u8>>>,
}

impl Clone for Registry {
    fn clone(&self) -> Self {
        Registry { secrets: self.secrets.clone(), kappa: self.kappa, seen: Mutex::default() }
    }
}

impl Registry {
    pub fn n(&self) -> usize {
        self.secrets.len()
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    /// Unknown signers verify as false rather than erroring.
    pub fn verify(&self, sig: &Signature, bytes: &[u8]) -> bool {
        let Some(secret) = self.secrets.get(sig.signer.index()) else {
            return false;
        };
        let mut seen = self.seen.lock().expect("registry cache poisoned");
        if seen.get(sig).is_some_and(|b| b == bytes) {
            return true;
        }
        let digest = Digest::of(bytes);
        let ok = sig.digest == digest && sig.tag == tag_of(secret, &digest);
        if ok {
            seen.insert(*sig, bytes.to_vec());
        }
        ok
    }
}

impl std::fmt::Debug for Registry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Registry").field("n", &self.n()).field("kappa", &self.kappa).finish()
    }
}

/// Trusted setup for `n` players with a fixed default seed.
pub fn setup(n: usize, kappa: usize) -> (Registry, Vec<KeyPair>) {
    setup_seeded(n, kappa, 0)
}

pub fn setup_seeded(n: usize, kappa: usize, seed: u64) -> (Registry, Vec<KeyPair>) {
    assert!(n >= 1, "setup requires at least one player");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7072_6674_6b65_7973);
    let mut secrets = Vec::with_capacity(n);
    let mut keys = Vec::with_capacity(n);
    for i in 0..n {
        let mut s = [0u8; 32];
        rng.fill_bytes(&mut s);
        secrets.push(s);
        keys.push(KeyPair { owner: PlayerId(i as u32), secret: s });
    }
    (Registry { secrets, kappa, seen: Mutex::default() }, keys)
}

impl Encode for Signature {
    fn encode(&self, out: &mut Vec<u8>) {
        self.signer.encode(out);
        self.digest.encode(out);
        self.tag.encode(out);
    }
}

impl Decode for Signature {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Signature {
            signer: PlayerId::decode(r)?,
            digest: Digest::decode(r)?,
            tag: Digest::decode(r)?,
        })
    }
}
