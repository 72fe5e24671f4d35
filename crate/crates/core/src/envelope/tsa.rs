//! Time-stamp tokens.
//!
//! A token signs `time_micros u64 | SHA-256(covered)` with the authority's
//! key, so its size does not depend on what it covers.

use std::sync::Arc;

use ed25519_dalek::{Signature, Verifier};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::pki::{Certificate, SignerIdentity};
use crate::codec::{put_u16, put_u32, put_u64, Reader};
use crate::time::{Clock, Timestamp};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TsaError {
    #[error("time-stamp token signature does not verify")]
    BadTsaSignature,
    #[error("time-stamping authority unavailable: {0}")]
    Unavailable(String),
    #[error("malformed time-stamp token")]
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TsaToken {
    pub time: Timestamp,
    pub signature: Vec<u8>,
    pub cert_id: Vec<u8>,
}

impl TsaToken {
    /// `time u64 | sig_len u32 | signature | id_len u16 | cert_id`, the same
    /// layout the envelope trailer uses.
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        put_u64(out, self.time.as_micros());
        put_u32(out, self.signature.len() as u32);
        out.extend_from_slice(&self.signature);
        put_u16(out, self.cert_id.len() as u16);
        out.extend_from_slice(&self.cert_id);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_into(&mut out);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, TsaError> {
        let mut r = Reader::new(bytes);
        let t = Self::read(&mut r).map_err(|_| TsaError::Malformed)?;
        if !r.is_empty() {
            return Err(TsaError::Malformed);
        }
        Ok(t)
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self, crate::codec::Truncated> {
        let time = Timestamp(r.u64("tsa_time")?);
        let sig_len = r.u32("tsa_sig_len")? as usize;
        let signature = r.bytes(sig_len, "tsa_signature")?.to_vec();
        let id_len = r.u16("tsa_cert_id_len")? as usize;
        let cert_id = r.bytes(id_len, "tsa_cert_id")?.to_vec();
        Ok(Self {
            time,
            signature,
            cert_id,
        })
    }
}

fn token_message(time: Timestamp, digest: &[u8; 32]) -> [u8; 40] {
    let mut m = [0u8; 40];
    m[..8].copy_from_slice(&time.as_micros().to_be_bytes());
    m[8..].copy_from_slice(digest);
    m
}

pub fn covered_digest(covered: &[u8]) -> [u8; 32] {
    Sha256::digest(covered).into()
}

/// Issues a token over the digest of some covered bytes.
pub fn tsa_issue_digest(tsa: &SignerIdentity, digest: &[u8; 32], now: Timestamp) -> TsaToken {
    let sig = tsa.sign(&token_message(now, digest));
    TsaToken {
        time: now,
        signature: sig.to_bytes().to_vec(),
        cert_id: tsa.leaf().cert_id().to_vec(),
    }
}

pub fn tsa_issue(tsa: &SignerIdentity, covered: &[u8], now: Timestamp) -> TsaToken {
    tsa_issue_digest(tsa, &covered_digest(covered), now)
}

/// Returns the stamped time if `token` is valid for `covered` under `tsa_cert`.
pub fn tsa_verify(
    token: &TsaToken,
    covered: &[u8],
    tsa_cert: &Certificate,
) -> Result<Timestamp, TsaError> {
    if token.cert_id != tsa_cert.cert_id() {
        return Err(TsaError::BadTsaSignature);
    }
    let sig: [u8; 64] = token
        .signature
        .as_slice()
        .try_into()
        .map_err(|_| TsaError::BadTsaSignature)?;
    let msg = token_message(token.time, &covered_digest(covered));
    tsa_cert
        .public_key()
        .verify(&msg, &Signature::from_bytes(&sig))
        .map_err(|_| TsaError::BadTsaSignature)?;
    Ok(token.time)
}

/// Something that can obtain time-stamp tokens.
pub trait TsaClient {
    fn stamp(&mut self, covered: &[u8]) -> Result<TsaToken, TsaError>;
}

/// In-process authority driven by an injectable clock.
pub struct LocalTsa {
    identity: Arc<SignerIdentity>,
    clock: Arc<dyn Clock>,
    pub available: bool,
    pub issued: u64,
}

impl LocalTsa {
    pub fn new(identity: Arc<SignerIdentity>, clock: Arc<dyn Clock>) -> Self {
        Self {
            identity,
            clock,
            available: true,
            issued: 0,
        }
    }
}

impl TsaClient for LocalTsa {
    fn stamp(&mut self, covered: &[u8]) -> Result<TsaToken, TsaError> {
        if !self.available {
            return Err(TsaError::Unavailable("authority offline".into()));
        }
        self.issued += 1;
        Ok(tsa_issue(&self.identity, covered, self.clock.now()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::pki::TestPki;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pki() -> TestPki {
        TestPki::generate(&mut ChaCha8Rng::seed_from_u64(11))
    }

    #[test]
    fn issue_then_verify() {
        let pki = pki();
        let tok = tsa_issue(&pki.tsa_initial, b"covered", Timestamp(42));
        assert_eq!(
            tsa_verify(&tok, b"covered", pki.tsa_initial.leaf()),
            Ok(Timestamp(42))
        );
    }

    #[test]
    fn other_bytes_do_not_verify() {
        let pki = pki();
        let tok = tsa_issue(&pki.tsa_initial, b"covered", Timestamp(42));
        assert_eq!(
            tsa_verify(&tok, b"covereD", pki.tsa_initial.leaf()),
            Err(TsaError::BadTsaSignature)
        );
        assert_eq!(
            tsa_verify(&tok, b"covered", pki.tsa_periodic.leaf()),
            Err(TsaError::BadTsaSignature)
        );
    }

    #[test]
    fn distinct_times_distinct_tokens() {
        let pki = pki();
        let a = tsa_issue(&pki.tsa_initial, b"x", Timestamp(1));
        let b = tsa_issue(&pki.tsa_initial, b"x", Timestamp(2));
        assert_ne!(a.signature, b.signature);
        assert_eq!(tsa_verify(&a, b"x", pki.tsa_initial.leaf()), Ok(Timestamp(1)));
        assert_eq!(tsa_verify(&b, b"x", pki.tsa_initial.leaf()), Ok(Timestamp(2)));
    }

    #[test]
    fn forged_time_fails() {
        let pki = pki();
        let mut tok = tsa_issue(&pki.tsa_initial, b"x", Timestamp(1));
        tok.time = Timestamp(0);
        assert!(tsa_verify(&tok, b"x", pki.tsa_initial.leaf()).is_err());
    }

    #[test]
    fn token_codec() {
        let pki = pki();
        let tok = tsa_issue(&pki.tsa_initial, b"x", Timestamp(9));
        assert_eq!(TsaToken::decode(&tok.encode()).unwrap(), tok);
        let mut enc = tok.encode();
        enc.pop();
        assert_eq!(TsaToken::decode(&enc), Err(TsaError::Malformed));
    }
}
