//! RTP packet parsing, sequence-number extension and replay protection.
//!
//! Packets are kept in their exact wire form next to the decoded header so
//! that an archived packet is byte-identical to what crossed the recorder.
//! Header extensions and padding are left inside the payload untouched.

use std::time::Duration;

use thiserror::Error;

use crate::time::Timestamp;

pub const RTP_VERSION: u8 = 2;
pub const FIXED_HEADER_LEN: usize = 12;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RtpError {
    #[error("datagram too short: {len} bytes, header needs {needed}")]
    TooShort { len: usize, needed: usize },
    #[error("unsupported RTP version {0}")]
    BadVersion(u8),
}

/// A parsed RTP packet together with its exact wire bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RtpPacket {
    pub version: u8,
    pub padding: bool,
    pub extension: bool,
    pub marker: bool,
    pub payload_type: u8,
    pub sequence: u16,
    pub timestamp: u32,
    pub ssrc: u32,
    pub csrc: Vec<u32>,
    /// Everything after the CSRC list, header extension and padding included.
    pub payload: Vec<u8>,
    raw: Vec<u8>,
}

impl RtpPacket {
    pub fn parse(bytes: &[u8]) -> Result<Self, RtpError> {
        if bytes.len() < FIXED_HEADER_LEN {
            return Err(RtpError::TooShort {
                len: bytes.len(),
                needed: FIXED_HEADER_LEN,
            });
        }
        let version = bytes[0] >> 6;
        if version != RTP_VERSION {
            return Err(RtpError::BadVersion(version));
        }
        let cc = (bytes[0] & 0x0f) as usize;
        let header_len = FIXED_HEADER_LEN + 4 * cc;
        if bytes.len() < header_len {
            return Err(RtpError::TooShort {
                len: bytes.len(),
                needed: header_len,
            });
        }
        let csrc = bytes[FIXED_HEADER_LEN..header_len]
            .chunks_exact(4)
            .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self {
            version,
            padding: bytes[0] & 0x20 != 0,
            extension: bytes[0] & 0x10 != 0,
            marker: bytes[1] & 0x80 != 0,
            payload_type: bytes[1] & 0x7f,
            sequence: u16::from_be_bytes([bytes[2], bytes[3]]),
            timestamp: u32::from_be_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]),
            ssrc: u32::from_be_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]),
            csrc,
            payload: bytes[header_len..].to_vec(),
            raw: bytes.to_vec(),
        })
    }

    /// Builds a packet without padding or header extension.
    ///
    /// Panics if more than 15 CSRCs are given or `payload_type` exceeds 127.
    pub fn build(
        payload_type: u8,
        marker: bool,
        sequence: u16,
        timestamp: u32,
        ssrc: u32,
        csrc: Vec<u32>,
        payload: Vec<u8>,
    ) -> Self {
        assert!(csrc.len() <= 15, "at most 15 CSRC entries");
        assert!(payload_type < 128, "payload type is 7 bits");
        let mut raw = Vec::with_capacity(FIXED_HEADER_LEN + 4 * csrc.len() + payload.len());
        raw.push((RTP_VERSION << 6) | csrc.len() as u8);
        raw.push(((marker as u8) << 7) | payload_type);
        raw.extend_from_slice(&sequence.to_be_bytes());
        raw.extend_from_slice(&timestamp.to_be_bytes());
        raw.extend_from_slice(&ssrc.to_be_bytes());
        for c in &csrc {
            raw.extend_from_slice(&c.to_be_bytes());
        }
        raw.extend_from_slice(&payload);
        Self {
            version: RTP_VERSION,
            padding: false,
            extension: false,
            marker,
            payload_type,
            sequence,
            timestamp,
            ssrc,
            csrc,
            payload,
            raw,
        }
    }

    pub fn serialize(&self) -> Vec<u8> {
        self.raw.clone()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.raw
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.raw
    }
}

/// Extends a `bits`-wide wrapping counter to 64 bits by picking the candidate
/// closest to `reference`. Ties resolve forward.
pub fn extend_counter(reference: u64, value: u64, bits: u32) -> u64 {
    let modulus = 1u64 << bits;
    let mask = modulus - 1;
    let value = value & mask;
    let base = (reference & !mask) | value;
    let mut best = base;
    for cand in [base.wrapping_sub(modulus), base.wrapping_add(modulus)] {
        // Skip candidates that wrapped around the 64-bit space.
        if cand.abs_diff(reference) > modulus {
            continue;
        }
        let (d_best, d_cand) = (best.abs_diff(reference), cand.abs_diff(reference));
        if d_cand < d_best || (d_cand == d_best && cand > best) {
            best = cand;
        }
    }
    best
}

/// Outcome of offering a packet to a [`ReplayWindow`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowDecision {
    /// Accepted; carries the absolute sequence number (first packet is 0).
    Accept(u64),
    /// Duplicate, too old for the window, or older than the first packet.
    Replay,
    /// Media timestamps disagree with wallclock progress.
    Inconsistent,
}

/// Origins keep extended counters away from zero so packets slightly older
/// than the first one still extend without underflow.
const SEQ_ORIGIN: u64 = 1 << 32;
const TS_ORIGIN: u64 = 1 << 40;

/// 32-bit sliding replay window over extended sequence numbers.
#[derive(Debug, Clone)]
pub struct ReplayWindow {
    base_ext_seq: Option<u64>,
    highest_ext_seq: Option<u64>,
    /// Bit `i` marks presence of `highest_ext_seq - i`.
    window_bits: u32,
    first_ext_ts: u64,
    latest_ext_ts: u64,
    first_wallclock: Timestamp,
    drift_bound: Duration,
}

impl ReplayWindow {
    pub const SIZE: u64 = 32;

    pub fn new(drift_bound: Duration) -> Self {
        Self {
            base_ext_seq: None,
            highest_ext_seq: None,
            window_bits: 0,
            first_ext_ts: 0,
            latest_ext_ts: 0,
            first_wallclock: Timestamp(0),
            drift_bound,
        }
    }

    pub fn highest_abs_seq(&self) -> Option<u64> {
        Some(self.highest_ext_seq? - self.base_ext_seq?)
    }

    /// Offers a packet. `clock_rate` is the media clock of its payload type,
    /// if known; without it the drift check is skipped.
    pub fn accept(
        &mut self,
        packet: &RtpPacket,
        now: Timestamp,
        clock_rate: Option<u32>,
    ) -> WindowDecision {
        let (Some(base), Some(highest)) = (self.base_ext_seq, self.highest_ext_seq) else {
            let base = SEQ_ORIGIN + packet.sequence as u64;
            self.base_ext_seq = Some(base);
            self.highest_ext_seq = Some(base);
            self.window_bits = 1;
            self.first_ext_ts = TS_ORIGIN + packet.timestamp as u64;
            self.latest_ext_ts = self.first_ext_ts;
            self.first_wallclock = now;
            return WindowDecision::Accept(0);
        };

        let ext = extend_counter(highest, packet.sequence as u64, 16);
        if ext < base {
            return WindowDecision::Replay;
        }
        if ext <= highest {
            let age = highest - ext;
            if age >= Self::SIZE || self.window_bits & (1 << age) != 0 {
                return WindowDecision::Replay;
            }
        }

        let ext_ts = extend_counter(self.latest_ext_ts, packet.timestamp as u64, 32);
        if let Some(rate) = clock_rate.filter(|r| *r > 0) {
            let media_us = (ext_ts as i128 - self.first_ext_ts as i128) * 1_000_000 / rate as i128;
            let wall_us = now.micros_since(self.first_wallclock) as i128;
            if (wall_us - media_us).unsigned_abs() > self.drift_bound.as_micros() {
                return WindowDecision::Inconsistent;
            }
        }

        if ext > highest {
            let shift = ext - highest;
            self.window_bits = if shift >= Self::SIZE {
                1
            } else {
                (self.window_bits << shift) | 1
            };
            self.highest_ext_seq = Some(ext);
            self.latest_ext_ts = ext_ts;
        } else {
            self.window_bits |= 1 << (highest - ext);
        }
        WindowDecision::Accept(ext - base)
    }
}
