use std::fmt;

use crate::envelope::{EnvelopeKind, HashDigest};
use crate::netproto::CheckCode;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail(String),
    NotApplicable,
}

impl CheckStatus {
    pub fn is_fail(&self) -> bool {
        matches!(self, CheckStatus::Fail(_))
    }
}

impl fmt::Display for CheckStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckStatus::Pass => f.write_str("pass"),
            CheckStatus::Fail(d) => write!(f, "FAIL ({d})"),
            CheckStatus::NotApplicable => f.write_str("n/a"),
        }
    }
}

/// Outcome of every check for one frame. At most one check fails: checking
/// stops at the first failure and leaves the rest not applicable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckReport {
    /// Zero-based position of the frame in the stream.
    pub position: usize,
    pub kind: Option<EnvelopeKind>,
    pub hash: HashDigest,
    statuses: [CheckStatus; 11],
}

impl CheckReport {
    pub(crate) fn new(position: usize, encoded: &[u8]) -> Self {
        Self {
            position,
            kind: None,
            hash: crate::envelope::envelope_hash(encoded),
            statuses: std::array::from_fn(|_| CheckStatus::NotApplicable),
        }
    }

    /// One-based frame number as counted on the wire.
    pub fn frame_number(&self) -> usize {
        self.position + 1
    }

    pub fn status(&self, code: CheckCode) -> &CheckStatus {
        &self.statuses[code as usize - 1]
    }

    pub(crate) fn set(&mut self, code: CheckCode, status: CheckStatus) {
        self.statuses[code as usize - 1] = status;
    }

    pub(crate) fn pass(&mut self, code: CheckCode) {
        self.set(code, CheckStatus::Pass);
    }

    pub(crate) fn fail(&mut self, code: CheckCode, detail: impl Into<String>) {
        self.set(code, CheckStatus::Fail(detail.into()));
    }

    pub fn failure(&self) -> Option<(CheckCode, &str)> {
        CheckCode::ALL.into_iter().find_map(|c| match self.status(c) {
            CheckStatus::Fail(d) => Some((c, d.as_str())),
            _ => None,
        })
    }

    pub fn passed(&self) -> bool {
        self.failure().is_none()
    }

    pub fn iter(&self) -> impl Iterator<Item = (CheckCode, &CheckStatus)> {
        CheckCode::ALL.into_iter().map(move |c| (c, self.status(c)))
    }
}
