//! Minimal certificate format and signer identities.
//!
//! A certificate binds a subject name to an Ed25519 public key and is signed
//! by its issuer:
//!
//! ```text
//! "SVC1" | subject_len u16 | subject | public_key[32] | issuer_key_id[32] | signature[64]
//! ```
//!
//! `issuer_key_id` is the SHA-256 of the issuer's public key. Roots are
//! self-signed. Chains are stored leaf first and may omit the root.

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::{put_u16, put_u32, Reader};

const CERT_MAGIC: &[u8; 4] = b"SVC1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PkiError {
    #[error("malformed certificate: {0}")]
    MalformedCertificate(String),
    #[error("certificate signature does not verify")]
    BadCertificateSignature,
    #[error("chain does not lead to the trust root")]
    UntrustedChain,
    #[error("empty certificate chain")]
    EmptyChain,
    #[error("signing key does not match the leaf certificate")]
    KeyMismatch,
}

pub type KeyId = [u8; 32];

pub fn key_id(key: &VerifyingKey) -> KeyId {
    Sha256::digest(key.as_bytes()).into()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    subject: String,
    public_key: VerifyingKey,
    issuer_key_id: KeyId,
    signature: Signature,
    raw: Vec<u8>,
}

impl Certificate {
    /// Issues a certificate for `public_key`, signed by `issuer`.
    pub fn issue(subject: &str, public_key: VerifyingKey, issuer: &SigningKey) -> Self {
        let issuer_key_id = key_id(&issuer.verifying_key());
        let mut raw = Vec::with_capacity(4 + 2 + subject.len() + 128);
        raw.extend_from_slice(CERT_MAGIC);
        put_u16(&mut raw, subject.len() as u16);
        raw.extend_from_slice(subject.as_bytes());
        raw.extend_from_slice(public_key.as_bytes());
        raw.extend_from_slice(&issuer_key_id);
        let signature = issuer.sign(&raw);
        raw.extend_from_slice(&signature.to_bytes());
        Self {
            subject: subject.to_owned(),
            public_key,
            issuer_key_id,
            signature,
            raw,
        }
    }

    pub fn self_signed(subject: &str, key: &SigningKey) -> Self {
        Self::issue(subject, key.verifying_key(), key)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PkiError> {
        let bad = |w: &str| PkiError::MalformedCertificate(w.to_owned());
        let mut r = Reader::new(bytes);
        if r.bytes(4, "magic").map_err(|_| bad("truncated magic"))? != CERT_MAGIC {
            return Err(bad("bad magic"));
        }
        let len = r.u16("subject_len").map_err(|_| bad("truncated subject length"))? as usize;
        let subject = r.bytes(len, "subject").map_err(|_| bad("truncated subject"))?;
        let subject = std::str::from_utf8(subject)
            .map_err(|_| bad("subject is not utf-8"))?
            .to_owned();
        let pk: [u8; 32] = r.array("public_key").map_err(|_| bad("truncated key"))?;
        let public_key = VerifyingKey::from_bytes(&pk).map_err(|_| bad("invalid public key"))?;
        let issuer_key_id = r.array("issuer").map_err(|_| bad("truncated issuer id"))?;
        let sig: [u8; 64] = r.array("signature").map_err(|_| bad("truncated signature"))?;
        if !r.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            subject,
            public_key,
            issuer_key_id,
            signature: Signature::from_bytes(&sig),
            raw: bytes.to_vec(),
        })
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.raw
    }

    pub fn subject(&self) -> &str {
        &self.subject
    }

    pub fn public_key(&self) -> &VerifyingKey {
        &self.public_key
    }

    pub fn key_id(&self) -> KeyId {
        key_id(&self.public_key)
    }

    /// Identifier of this certificate: SHA-256 over its encoding.
    pub fn cert_id(&self) -> [u8; 32] {
        Sha256::digest(&self.raw).into()
    }

    fn tbs(&self) -> &[u8] {
        &self.raw[..self.raw.len() - 64]
    }

    /// Checks that `issuer` signed this certificate.
    pub fn verify_issued_by(&self, issuer: &Certificate) -> Result<(), PkiError> {
        if self.issuer_key_id != issuer.key_id() {
            return Err(PkiError::UntrustedChain);
        }
        issuer
            .public_key
            .verify(self.tbs(), &self.signature)
            .map_err(|_| PkiError::BadCertificateSignature)
    }
}

/// Validates `chain` (leaf first) against `root` and returns the leaf.
pub fn validate_chain<'a>(
    chain: &'a [Certificate],
    root: &Certificate,
) -> Result<&'a Certificate, PkiError> {
    let leaf = chain.first().ok_or(PkiError::EmptyChain)?;
    root.verify_issued_by(root)
        .map_err(|_| PkiError::UntrustedChain)?;
    for (i, cert) in chain.iter().enumerate() {
        let issuer = chain.get(i + 1).unwrap_or(root);
        cert.verify_issued_by(issuer)
            .map_err(|_| PkiError::UntrustedChain)?;
    }
    Ok(leaf)
}

/// A signing key with its certificate chain (leaf first, root excluded).
#[derive(Clone)]
pub struct SignerIdentity {
    key: SigningKey,
    chain: Vec<Certificate>,
}

impl std::fmt::Debug for SignerIdentity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SignerIdentity")
            .field("leaf", &self.leaf().subject())
            .finish_non_exhaustive()
    }
}

impl SignerIdentity {
    pub fn new(key: SigningKey, chain: Vec<Certificate>) -> Result<Self, PkiError> {
        let leaf = chain.first().ok_or(PkiError::EmptyChain)?;
        if leaf.public_key() != &key.verifying_key() {
            return Err(PkiError::KeyMismatch);
        }
        Ok(Self { key, chain })
    }

    pub fn leaf(&self) -> &Certificate {
        &self.chain[0]
    }

    pub fn chain(&self) -> &[Certificate] {
        &self.chain
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        self.key.sign(message)
    }

    pub fn key_bytes(&self) -> [u8; 32] {
        self.key.to_bytes()
    }

    pub fn from_key_bytes(key: [u8; 32], chain: Vec<Certificate>) -> Result<Self, PkiError> {
        Self::new(SigningKey::from_bytes(&key), chain)
    }
}

/// Encodes a chain as repeated `len u32 | cert`.
pub fn encode_chain(chain: &[Certificate]) -> Vec<u8> {
    let mut out = Vec::new();
    for c in chain {
        put_u32(&mut out, c.as_bytes().len() as u32);
        out.extend_from_slice(c.as_bytes());
    }
    out
}

pub fn decode_chain(bytes: &[u8]) -> Result<Vec<Certificate>, PkiError> {
    let mut r = Reader::new(bytes);
    let mut chain = Vec::new();
    while !r.is_empty() {
        let len = r
            .u32("cert_len")
            .map_err(|_| PkiError::MalformedCertificate("truncated length".into()))?;
        let raw = r
            .bytes(len as usize, "cert")
            .map_err(|_| PkiError::MalformedCertificate("truncated certificate".into()))?;
        chain.push(Certificate::from_bytes(raw)?);
    }
    Ok(chain)
}

/// Self-contained PKI: one root, one intermediate CA, the recorder identity
/// and two time-stamping authorities.
#[derive(Clone, Debug)]
pub struct TestPki {
    pub root: Certificate,
    pub recorder: SignerIdentity,
    /// Anchors the start of each call.
    pub tsa_initial: SignerIdentity,
    /// Anchors periodic archive-wide roots.
    pub tsa_periodic: SignerIdentity,
    root_key: SigningKey,
}

impl TestPki {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let root_key = SigningKey::generate(rng);
        let root = Certificate::self_signed("sva-root", &root_key);
        let ca_key = SigningKey::generate(rng);
        let ca = Certificate::issue("sva-recorder-ca", ca_key.verifying_key(), &root_key);
        let leaf_key = SigningKey::generate(rng);
        let leaf = Certificate::issue("sva-recorder", leaf_key.verifying_key(), &ca_key);
        let recorder = SignerIdentity::new(leaf_key, vec![leaf, ca]).expect("fresh leaf");
        let mut tsa = |name: &str| {
            let k = SigningKey::generate(rng);
            let c = Certificate::issue(name, k.verifying_key(), &root_key);
            SignerIdentity::new(k, vec![c]).expect("fresh tsa")
        };
        let tsa_initial = tsa("sva-tsa-t1");
        let tsa_periodic = tsa("sva-tsa-t2");
        Self {
            root,
            recorder,
            tsa_initial,
            tsa_periodic,
            root_key,
        }
    }

    /// A second recorder identity under the same root, for forgery tests.
    pub fn issue_recorder<R: RngCore + CryptoRng>(&self, rng: &mut R, subject: &str) -> SignerIdentity {
        let k = SigningKey::generate(rng);
        let c = Certificate::issue(subject, k.verifying_key(), &self.root_key);
        SignerIdentity::new(k, vec![c]).expect("fresh leaf")
    }
}

/// A standalone identity whose chain ends at its own self-signed root.
pub fn standalone_identity<R: RngCore + CryptoRng>(rng: &mut R, name: &str) -> (Certificate, SignerIdentity) {
    let root_key = SigningKey::generate(rng);
    let root = Certificate::self_signed(&format!("{name}-root"), &root_key);
    let key = SigningKey::generate(rng);
    let leaf = Certificate::issue(name, key.verifying_key(), &root_key);
    (root, SignerIdentity::new(key, vec![leaf]).expect("fresh leaf"))
}
