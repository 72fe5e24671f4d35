//! Packet-loss accounting from absolute sequence numbers.

use serde::{Deserialize, Serialize};

/// Loss threshold policy. Loss strictly above the threshold is a violation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QosPolicy {
    pub loss_threshold: f64,
    pub action: QosAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QosAction {
    Terminate,
}

impl Default for QosPolicy {
    fn default() -> Self {
        Self {
            loss_threshold: 0.01,
            action: QosAction::Terminate,
        }
    }
}

const PPB: u128 = 1_000_000_000;

impl QosPolicy {
    pub fn new(loss_threshold: f64) -> Option<Self> {
        (loss_threshold > 0.0 && loss_threshold < 1.0).then_some(Self {
            loss_threshold,
            action: QosAction::Terminate,
        })
    }

    /// Exact comparison `lost / expected > threshold`, with the threshold
    /// taken to parts per billion.
    pub fn violated(&self, lost: u64, expected: u64) -> bool {
        if expected == 0 {
            return false;
        }
        let threshold_ppb = (self.loss_threshold * PPB as f64).round() as u128;
        lost as u128 * PPB > threshold_ppb * expected as u128
    }
}

/// Per-direction loss counter.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LossCounter {
    pub highest_abs_seq: Option<u64>,
    pub received: u64,
}

impl LossCounter {
    pub fn record(&mut self, abs_seq: u64) {
        self.received += 1;
        self.highest_abs_seq = Some(self.highest_abs_seq.map_or(abs_seq, |h| h.max(abs_seq)));
    }

    /// Packets expected so far: everything up to the highest number seen.
    pub fn expected(&self) -> u64 {
        self.highest_abs_seq.map_or(0, |h| h + 1)
    }

    pub fn lost(&self) -> u64 {
        self.expected().saturating_sub(self.received)
    }

    pub fn loss_fraction(&self) -> f64 {
        match self.expected() {
            0 => 0.0,
            e => self.lost() as f64 / e as f64,
        }
    }

    pub fn violates(&self, policy: &QosPolicy) -> bool {
        policy.violated(self.lost(), self.expected())
    }
}
