//! Periodic hash-tree anchors over closed call files.
//!
//! Leaves are the SHA-256 of each file's full contents, ordered by file
//! name (the call id). Inner nodes hash `left | right`; an odd node at the
//! end of a level is paired with itself. The root is time-stamped by the
//! periodic authority and the record kept under `anchors/`.

use std::fs;
use std::io;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::store::ArchiveStore;
use crate::envelope::{tsa_verify, Certificate, TsaClient, TsaError, TsaToken};
use crate::time::Timestamp;

#[derive(Debug, Error)]
pub enum AnchorError {
    #[error("no call closed in the period")]
    EmptyPeriod,
    #[error("recomputed root differs from the anchored one")]
    RootMismatch,
    #[error("anchor time-stamp does not verify")]
    BadTsaSignature,
    #[error("time-stamping authority: {0}")]
    Tsa(TsaError),
    #[error("malformed anchor record: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn node(left: &[u8; 32], right: &[u8; 32]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(left);
    h.update(right);
    h.finalize().into()
}

pub fn leaf_hash(contents: &[u8]) -> [u8; 32] {
    Sha256::digest(contents).into()
}

/// Root over `leaves` in the given order. Panics on an empty slice.
pub fn merkle_root(leaves: &[[u8; 32]]) -> [u8; 32] {
    assert!(!leaves.is_empty(), "merkle root of no leaves");
    let mut level = leaves.to_vec();
    loop {
        level = level
            .chunks(2)
            .map(|pair| node(&pair[0], pair.get(1).unwrap_or(&pair[0])))
            .collect();
        if level.len() == 1 {
            return level[0];
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorRecord {
    pub period_start: u64,
    pub period_end: u64,
    /// Anchored file names in leaf order.
    pub files: Vec<String>,
    pub merkle_root: String,
    /// Encoded time-stamp token, hex.
    pub tsa_token: String,
}

impl AnchorRecord {
    pub fn token(&self) -> Result<TsaToken, AnchorError> {
        let raw = hex::decode(&self.tsa_token).map_err(|e| AnchorError::Malformed(e.to_string()))?;
        TsaToken::decode(&raw).map_err(|e| AnchorError::Malformed(e.to_string()))
    }

    pub fn root_bytes(&self) -> Result<[u8; 32], AnchorError> {
        hex::decode(&self.merkle_root)
            .ok()
            .and_then(|r| r.try_into().ok())
            .ok_or_else(|| AnchorError::Malformed("merkle root".into()))
    }
}

fn leaves_for(store: &ArchiveStore, files: &[String]) -> Result<Vec<[u8; 32]>, AnchorError> {
    files.iter().map(|f| Ok(leaf_hash(&store.read_file(f)?))).collect()
}

/// Anchors every call closed in `[period_start, period_end)`.
pub fn period_anchor(
    store: &ArchiveStore,
    period_start: Timestamp,
    period_end: Timestamp,
    tsa: &mut dyn TsaClient,
) -> Result<(AnchorRecord, PathBuf), AnchorError> {
    let mut files: Vec<String> = store
        .closed_calls()?
        .into_iter()
        .filter(|c| c.closed_at >= period_start && c.closed_at < period_end)
        .map(|c| c.file_name)
        .collect();
    files.sort();
    files.dedup();
    if files.is_empty() {
        return Err(AnchorError::EmptyPeriod);
    }
    let root = merkle_root(&leaves_for(store, &files)?);
    let token = tsa.stamp(&root).map_err(AnchorError::Tsa)?;
    let record = AnchorRecord {
        period_start: period_start.as_micros(),
        period_end: period_end.as_micros(),
        files,
        merkle_root: hex::encode(root),
        tsa_token: hex::encode(token.encode()),
    };
    let dir = store.root().join("anchors");
    fs::create_dir_all(&dir)?;
    let path = dir.join(format!("{}-{}.json", record.period_start, record.period_end));
    let json = serde_json::to_vec_pretty(&record).map_err(|e| AnchorError::Malformed(e.to_string()))?;
    fs::write(&path, json)?;
    Ok((record, path))
}

pub fn load_anchor(path: &std::path::Path) -> Result<AnchorRecord, AnchorError> {
    serde_json::from_slice(&fs::read(path)?).map_err(|e| AnchorError::Malformed(e.to_string()))
}

/// Recomputes the root over the current files and checks the time-stamp.
pub fn verify_anchor(store: &ArchiveStore, anchor: &AnchorRecord, tsa_cert: &Certificate) -> Result<Timestamp, AnchorError> {
    let claimed = anchor.root_bytes()?;
    let token = anchor.token()?;
    let time = tsa_verify(&token, &claimed, tsa_cert).map_err(|_| AnchorError::BadTsaSignature)?;
    if anchor.files.is_empty() || merkle_root(&leaves_for(store, &anchor.files)?) != claimed {
        return Err(AnchorError::RootMismatch);
    }
    Ok(time)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_leaf_pairs_with_itself() {
        let h = leaf_hash(b"a");
        assert_eq!(merkle_root(&[h]), node(&h, &h));
    }

    #[test]
    fn two_leaves() {
        let (a, b) = (leaf_hash(b"a"), leaf_hash(b"b"));
        assert_eq!(merkle_root(&[a, b]), node(&a, &b));
    }

    #[test]
    fn three_leaves_duplicate_last() {
        let l: Vec<_> = [b"a", b"b", b"c"].iter().map(|x| leaf_hash(*x)).collect();
        let expected = node(&node(&l[0], &l[1]), &node(&l[2], &l[2]));
        assert_eq!(merkle_root(&l), expected);
    }
}
