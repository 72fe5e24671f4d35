//! Signed interval envelopes.
//!
//! Every interval travels and is stored inside an envelope. The layout is
//! deterministic so the hash of the encoded bytes can serve as the chain
//! link (all integers big-endian):
//!
//! ```text
//! "SVA1" | kind u8 | body_len u32 | body
//!        | cert_count u16 | (cert_len u32 | cert)*
//!        | sig_len u32 | signature
//!        | has_tsa u8 | [tsa_time u64 | tsa_sig_len u32 | tsa_sig | id_len u16 | id]
//! ```
//!
//! The signature covers `kind | body`. A time-stamp token, present only on
//! the initial envelope, covers everything from the magic through the
//! signature. Only the initial envelope carries the certificate chain; later
//! envelopes are checked against the leaf pinned from it.

pub mod pki;
pub mod tsa;

use std::fmt;

use ed25519_dalek::{Signature, Verifier};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::{put_u16, put_u32, Reader};
pub use pki::{Certificate, PkiError, SignerIdentity};
pub use tsa::{tsa_issue, tsa_verify, TsaClient, TsaError, TsaToken};

pub const MAGIC: &[u8; 4] = b"SVA1";
pub const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum EnvelopeKind {
    Initial = 0,
    Voice = 1,
    Final = 2,
}

impl EnvelopeKind {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Self::Initial),
            1 => Some(Self::Voice),
            2 => Some(Self::Final),
            _ => None,
        }
    }
}

impl fmt::Display for EnvelopeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Initial => "initial",
            Self::Voice => "voice",
            Self::Final => "final",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnvelopeError {
    #[error("malformed envelope: {0}")]
    Malformed(String),
    #[error("envelope violates encoding rule: {0}")]
    EncodingRuleViolation(&'static str),
    #[error("certificates must be embedded exactly in the initial envelope")]
    PreconditionViolation,
    #[error(transparent)]
    Pki(#[from] PkiError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VerifyError {
    #[error("envelope signature does not verify")]
    BadSignature,
    #[error("certificate chain is not anchored at the trust root")]
    UntrustedChain,
    #[error("no pinned signer for a non-initial envelope")]
    MissingPin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HashAlgorithm {
    Sha256 = 1,
}

impl HashAlgorithm {
    pub fn from_id(id: u8) -> Option<Self> {
        (id == 1).then_some(Self::Sha256)
    }
}

/// Digest of an encoded envelope.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct HashDigest {
    pub algorithm: HashAlgorithm,
    pub bytes: [u8; DIGEST_LEN],
}

impl HashDigest {
    pub fn sha256(bytes: [u8; DIGEST_LEN]) -> Self {
        Self {
            algorithm: HashAlgorithm::Sha256,
            bytes,
        }
    }

    pub fn of(data: &[u8]) -> Self {
        Self::sha256(Sha256::digest(data).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.bytes)
    }
}

impl fmt::Debug for HashDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HashDigest({})", &self.to_hex()[..16])
    }
}

/// Hash of the full encoded envelope, signature and token included.
pub fn envelope_hash(encoded: &[u8]) -> HashDigest {
    HashDigest::of(encoded)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub kind: EnvelopeKind,
    pub body: Vec<u8>,
    pub cert_chain: Vec<Vec<u8>>,
    pub signature: Vec<u8>,
    pub tsa_token: Option<TsaToken>,
}

fn signed_message(kind: EnvelopeKind, body: &[u8]) -> Vec<u8> {
    let mut m = Vec::with_capacity(1 + body.len());
    m.push(kind as u8);
    m.extend_from_slice(body);
    m
}

impl Envelope {
    fn check_rules(&self) -> Result<(), &'static str> {
        let initial = self.kind == EnvelopeKind::Initial;
        if initial != !self.cert_chain.is_empty() {
            return Err("certificate chain present iff initial");
        }
        if initial != self.tsa_token.is_some() {
            return Err("time-stamp token present iff initial");
        }
        Ok(())
    }

    /// Bytes from the magic through the signature: what a time-stamp covers.
    pub fn signed_prefix(&self) -> Vec<u8> {
        let certs: usize = self.cert_chain.iter().map(|c| 4 + c.len()).sum();
        let mut out = Vec::with_capacity(4 + 1 + 4 + self.body.len() + 2 + certs + 4 + self.signature.len() + 64);
        out.extend_from_slice(MAGIC);
        out.push(self.kind as u8);
        put_u32(&mut out, self.body.len() as u32);
        out.extend_from_slice(&self.body);
        put_u16(&mut out, self.cert_chain.len() as u16);
        for c in &self.cert_chain {
            put_u32(&mut out, c.len() as u32);
            out.extend_from_slice(c);
        }
        put_u32(&mut out, self.signature.len() as u32);
        out.extend_from_slice(&self.signature);
        out
    }

    pub fn encode(&self) -> Result<Vec<u8>, EnvelopeError> {
        self.check_rules()
            .map_err(EnvelopeError::EncodingRuleViolation)?;
        let mut out = self.signed_prefix();
        match &self.tsa_token {
            None => out.push(0),
            Some(t) => {
                out.push(1);
                t.encode_into(&mut out);
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, EnvelopeError> {
        let bad = |what: &str| EnvelopeError::Malformed(what.to_owned());
        let trunc = |t: crate::codec::Truncated| EnvelopeError::Malformed(format!("truncated {}", t.what));
        let mut r = Reader::new(bytes);
        if r.bytes(4, "magic").map_err(trunc)? != MAGIC {
            return Err(bad("bad magic"));
        }
        let kind = EnvelopeKind::from_u8(r.u8("kind").map_err(trunc)?).ok_or_else(|| bad("unknown kind"))?;
        let body_len = r.u32("body_len").map_err(trunc)? as usize;
        let body = r.bytes(body_len, "body").map_err(trunc)?.to_vec();
        let cert_count = r.u16("cert_count").map_err(trunc)?;
        let mut cert_chain = Vec::with_capacity(cert_count.min(16) as usize);
        for _ in 0..cert_count {
            let len = r.u32("cert_len").map_err(trunc)? as usize;
            cert_chain.push(r.bytes(len, "cert").map_err(trunc)?.to_vec());
        }
        let sig_len = r.u32("sig_len").map_err(trunc)? as usize;
        let signature = r.bytes(sig_len, "signature").map_err(trunc)?.to_vec();
        let tsa_token = match r.u8("has_tsa").map_err(trunc)? {
            0 => None,
            1 => Some(TsaToken::read(&mut r).map_err(trunc)?),
            _ => return Err(bad("has_tsa flag out of range")),
        };
        if !r.is_empty() {
            return Err(bad("trailing bytes"));
        }
        let env = Self {
            kind,
            body,
            cert_chain,
            signature,
            tsa_token,
        };
        env.check_rules().map_err(bad)?;
        Ok(env)
    }

    /// Parses the embedded certificate chain.
    pub fn certificates(&self) -> Result<Vec<Certificate>, PkiError> {
        self.cert_chain.iter().map(|c| Certificate::from_bytes(c)).collect()
    }
}

/// Signs `kind | body`. Certificates must be embedded exactly for the
/// initial envelope. The token of an initial envelope is attached separately.
pub fn sign_envelope(
    identity: &SignerIdentity,
    kind: EnvelopeKind,
    body: Vec<u8>,
    include_certs: bool,
) -> Result<Envelope, EnvelopeError> {
    if include_certs != (kind == EnvelopeKind::Initial) {
        return Err(EnvelopeError::PreconditionViolation);
    }
    let signature = identity.sign(&signed_message(kind, &body));
    let cert_chain = if include_certs {
        identity.chain().iter().map(|c| c.as_bytes().to_vec()).collect()
    } else {
        Vec::new()
    };
    Ok(Envelope {
        kind,
        body,
        cert_chain,
        signature: signature.to_bytes().to_vec(),
        tsa_token: None,
    })
}

fn check_signature(env: &Envelope, leaf: &Certificate) -> Result<(), VerifyError> {
    let sig: [u8; 64] = env
        .signature
        .as_slice()
        .try_into()
        .map_err(|_| VerifyError::BadSignature)?;
    leaf.public_key()
        .verify(&signed_message(env.kind, &env.body), &Signature::from_bytes(&sig))
        .map_err(|_| VerifyError::BadSignature)
}

/// Verifies the envelope signature and returns the signer's leaf certificate.
///
/// Initial envelopes are checked against their embedded chain, which must
/// lead to `trust_root`. All others need the leaf pinned from the initial one.
pub fn verify_envelope(
    env: &Envelope,
    trust_root: &Certificate,
    pinned_leaf: Option<&Certificate>,
) -> Result<Certificate, VerifyError> {
    match env.kind {
        EnvelopeKind::Initial => {
            let chain = env.certificates().map_err(|_| VerifyError::UntrustedChain)?;
            let leaf = pki::validate_chain(&chain, trust_root).map_err(|_| VerifyError::UntrustedChain)?;
            check_signature(env, leaf)?;
            Ok(leaf.clone())
        }
        EnvelopeKind::Voice | EnvelopeKind::Final => {
            let leaf = pinned_leaf.ok_or(VerifyError::MissingPin)?;
            check_signature(env, leaf)?;
            Ok(leaf.clone())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::Timestamp;
    use pki::{standalone_identity, TestPki};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pki() -> TestPki {
        TestPki::generate(&mut ChaCha8Rng::seed_from_u64(21))
    }

    fn stamped_initial(pki: &TestPki, body: &[u8]) -> Envelope {
        let mut env = sign_envelope(&pki.recorder, EnvelopeKind::Initial, body.to_vec(), true).unwrap();
        env.tsa_token = Some(tsa_issue(&pki.tsa_initial, &env.signed_prefix(), Timestamp(5)));
        env
    }

    #[test]
    fn final_envelope_size() {
        let env = Envelope {
            kind: EnvelopeKind::Final,
            body: vec![7; 48],
            cert_chain: vec![],
            signature: vec![1; 64],
            tsa_token: None,
        };
        assert_eq!(env.encode().unwrap().len(), 4 + 1 + 4 + 48 + 2 + 4 + 64 + 1);
    }

    #[test]
    fn voice_with_token_is_rejected() {
        let env = Envelope {
            kind: EnvelopeKind::Voice,
            body: vec![],
            cert_chain: vec![],
            signature: vec![0; 64],
            tsa_token: Some(TsaToken {
                time: Timestamp(0),
                signature: vec![],
                cert_id: vec![],
            }),
        };
        assert!(matches!(env.encode(), Err(EnvelopeError::EncodingRuleViolation(_))));
    }

    #[test]
    fn decode_rejects_bad_magic_and_overrun() {
        let pki = pki();
        let env = sign_envelope(&pki.recorder, EnvelopeKind::Voice, vec![1, 2, 3], false).unwrap();
        let enc = env.encode().unwrap();
        let mut bad = enc.clone();
        bad[0] = b'X';
        assert!(matches!(Envelope::decode(&bad), Err(EnvelopeError::Malformed(_))));
        // body_len claims more than the buffer holds
        let mut over = enc.clone();
        over[5..9].copy_from_slice(&(enc.len() as u32).to_be_bytes());
        assert!(matches!(Envelope::decode(&over), Err(EnvelopeError::Malformed(_))));
        assert!(matches!(Envelope::decode(&enc[..enc.len() - 1]), Err(EnvelopeError::Malformed(_))));
        assert_eq!(Envelope::decode(&enc).unwrap(), env);
    }

    #[test]
    fn initial_round_trip_and_verify() {
        let pki = pki();
        let env = stamped_initial(&pki, b"meta");
        let enc = env.encode().unwrap();
        let dec = Envelope::decode(&enc).unwrap();
        assert_eq!(dec.encode().unwrap(), enc);
        let leaf = verify_envelope(&dec, &pki.root, None).unwrap();
        assert_eq!(&leaf, pki.recorder.leaf());
        let tok = dec.tsa_token.as_ref().unwrap();
        assert_eq!(
            tsa_verify(tok, &dec.signed_prefix(), pki.tsa_initial.leaf()),
            Ok(Timestamp(5))
        );
    }

    #[test]
    fn flipped_body_fails_signature() {
        let pki = pki();
        let mut env = sign_envelope(&pki.recorder, EnvelopeKind::Voice, vec![0; 10], false).unwrap();
        env.body[3] ^= 0x10;
        assert_eq!(
            verify_envelope(&env, &pki.root, Some(pki.recorder.leaf())),
            Err(VerifyError::BadSignature)
        );
    }

    #[test]
    fn certs_only_on_initial() {
        let pki = pki();
        assert_eq!(
            sign_envelope(&pki.recorder, EnvelopeKind::Voice, vec![], true).unwrap_err(),
            EnvelopeError::PreconditionViolation
        );
        assert_eq!(
            sign_envelope(&pki.recorder, EnvelopeKind::Initial, vec![], false).unwrap_err(),
            EnvelopeError::PreconditionViolation
        );
    }

    #[test]
    fn foreign_root_untrusted() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let pki = pki();
        let (other_root, _) = standalone_identity(&mut rng, "x");
        let env = stamped_initial(&pki, b"meta");
        assert_eq!(verify_envelope(&env, &other_root, None), Err(VerifyError::UntrustedChain));
    }

    #[test]
    fn other_signer_bad_signature() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let pki = pki();
        let (_, mallory) = standalone_identity(&mut rng, "mallory");
        let env = sign_envelope(&mallory, EnvelopeKind::Voice, vec![1], false).unwrap();
        assert_eq!(
            verify_envelope(&env, &pki.root, Some(pki.recorder.leaf())),
            Err(VerifyError::BadSignature)
        );
        assert_eq!(verify_envelope(&env, &pki.root, None), Err(VerifyError::MissingPin));
    }

    #[test]
    fn hash_properties() {
        let a = envelope_hash(b"abc");
        assert_eq!(a, envelope_hash(b"abc"));
        assert_ne!(a, envelope_hash(b"abd"));
        assert_eq!(a.bytes.len(), 32);
        assert_eq!(HashAlgorithm::from_id(1), Some(HashAlgorithm::Sha256));
        assert_eq!(HashAlgorithm::from_id(0), None);
    }
}
