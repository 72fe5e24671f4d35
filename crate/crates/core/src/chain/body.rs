//! Canonical encodings of the three interval body types.
//!
//! ```text
//! Initial = nonce[16] | start_time u64 | from_len u16 | from | to_len u16 | to
//!           | map_count u8 | (pt u8 | name_len u16 | name | rate u32 | channels u8)*
//! Voice   = prev_hash[32] | index u32 | time u64 | direction u8 | count u16
//!           | (abs_seq u64)* | (pkt_len u16 | pkt)*
//! Final   = prev_hash[32] | last_flag u8 = 1 | time u64 | reason u8
//! ```

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::codec::{put_u16, put_u32, put_u64, Reader, Truncated};
use crate::envelope::{EnvelopeKind, HashDigest, DIGEST_LEN};
use crate::time::Timestamp;

pub const NONCE_LEN: usize = 16;
/// Size of a voice body carrying no packets.
pub const VOICE_HEADER_LEN: usize = DIGEST_LEN + 4 + 8 + 1 + 2;
pub const FINAL_BODY_LEN: usize = DIGEST_LEN + 1 + 8 + 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BodyError {
    #[error("malformed interval body: {0}")]
    Malformed(String),
}

impl From<Truncated> for BodyError {
    fn from(t: Truncated) -> Self {
        BodyError::Malformed(format!("truncated {}", t.what))
    }
}

fn malformed(what: impl Into<String>) -> BodyError {
    BodyError::Malformed(what.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Direction {
    AtoB = 0,
    BtoA = 1,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::AtoB, Direction::BtoA];

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Self::AtoB),
            1 => Some(Self::BtoA),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn other(self) -> Self {
        match self {
            Self::AtoB => Self::BtoA,
            Self::BtoA => Self::AtoB,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::AtoB => "A->B",
            Self::BtoA => "B->A",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum TerminationReason {
    ProtocolOrNetworkError = 0,
    HangupA = 1,
    HangupB = 2,
    QosViolation = 3,
    TamperDetected = 4,
}

impl TerminationReason {
    pub fn from_u8(v: u8) -> Option<Self> {
        use TerminationReason::*;
        [ProtocolOrNetworkError, HangupA, HangupB, QosViolation, TamperDetected]
            .get(v as usize)
            .copied()
    }
}

impl fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ProtocolOrNetworkError => "protocol-or-network-error",
            Self::HangupA => "hangup-a",
            Self::HangupB => "hangup-b",
            Self::QosViolation => "qos-violation",
            Self::TamperDetected => "tamper-detected",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PayloadMapping {
    pub payload_type: u8,
    pub codec_name: String,
    pub clock_rate: u32,
    pub channels: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallMeta {
    pub nonce: [u8; NONCE_LEN],
    pub start_time: Timestamp,
    pub from_uri: String,
    pub to_uri: String,
    pub payload_map: Vec<PayloadMapping>,
}

impl CallMeta {
    pub fn mapping(&self, payload_type: u8) -> Option<&PayloadMapping> {
        self.payload_map.iter().find(|m| m.payload_type == payload_type)
    }

    pub fn clock_rate(&self, payload_type: u8) -> Option<u32> {
        self.mapping(payload_type).map(|m| m.clock_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoiceBody {
    pub prev_hash: HashDigest,
    pub index: u32,
    pub time: Timestamp,
    pub direction: Direction,
    pub abs_seqs: Vec<u64>,
    pub packets: Vec<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinalBody {
    pub prev_hash: HashDigest,
    pub time: Timestamp,
    pub reason: TerminationReason,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IntervalBody {
    Initial(CallMeta),
    Voice(VoiceBody),
    Final(FinalBody),
}

fn put_str16(out: &mut Vec<u8>, s: &str) -> Result<(), BodyError> {
    let len = u16::try_from(s.len()).map_err(|_| malformed("string longer than 65535 bytes"))?;
    put_u16(out, len);
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn read_str16(r: &mut Reader<'_>, what: &'static str) -> Result<String, BodyError> {
    let len = r.u16(what)? as usize;
    let raw = r.bytes(len, what)?;
    String::from_utf8(raw.to_vec()).map_err(|_| malformed(format!("{what} is not utf-8")))
}

fn check_voice(v: &VoiceBody) -> Result<(), BodyError> {
    if v.abs_seqs.len() != v.packets.len() {
        return Err(malformed("sequence list and packet list differ in length"));
    }
    if v.abs_seqs.len() > u16::MAX as usize {
        return Err(malformed("too many packets in one interval"));
    }
    if v.abs_seqs.windows(2).any(|w| w[0] >= w[1]) {
        return Err(malformed("absolute sequence numbers not strictly increasing"));
    }
    if v.packets.iter().any(|p| p.len() > u16::MAX as usize) {
        return Err(malformed("packet longer than 65535 bytes"));
    }
    Ok(())
}

fn check_meta(m: &CallMeta) -> Result<(), BodyError> {
    let mut seen = HashSet::new();
    for e in &m.payload_map {
        if e.payload_type > 127 {
            return Err(malformed("payload type out of range"));
        }
        if !seen.insert(e.payload_type) {
            return Err(malformed(format!("duplicate payload type {}", e.payload_type)));
        }
    }
    if m.payload_map.len() > u8::MAX as usize {
        return Err(malformed("payload map too large"));
    }
    Ok(())
}

impl IntervalBody {
    pub fn kind(&self) -> EnvelopeKind {
        match self {
            Self::Initial(_) => EnvelopeKind::Initial,
            Self::Voice(_) => EnvelopeKind::Voice,
            Self::Final(_) => EnvelopeKind::Final,
        }
    }

    /// Interval time: the call start for the initial body.
    pub fn time(&self) -> Timestamp {
        match self {
            Self::Initial(m) => m.start_time,
            Self::Voice(v) => v.time,
            Self::Final(f) => f.time,
        }
    }

    pub fn prev_hash(&self) -> Option<&HashDigest> {
        match self {
            Self::Initial(_) => None,
            Self::Voice(v) => Some(&v.prev_hash),
            Self::Final(f) => Some(&f.prev_hash),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, BodyError> {
        let mut out = Vec::new();
        match self {
            Self::Initial(m) => {
                check_meta(m)?;
                out.extend_from_slice(&m.nonce);
                put_u64(&mut out, m.start_time.as_micros());
                put_str16(&mut out, &m.from_uri)?;
                put_str16(&mut out, &m.to_uri)?;
                out.push(m.payload_map.len() as u8);
                for e in &m.payload_map {
                    out.push(e.payload_type);
                    put_str16(&mut out, &e.codec_name)?;
                    put_u32(&mut out, e.clock_rate);
                    out.push(e.channels);
                }
            }
            Self::Voice(v) => {
                check_voice(v)?;
                let payload: usize = v.packets.iter().map(|p| 2 + p.len()).sum();
                out.reserve(VOICE_HEADER_LEN + 8 * v.abs_seqs.len() + payload);
                out.extend_from_slice(&v.prev_hash.bytes);
                put_u32(&mut out, v.index);
                put_u64(&mut out, v.time.as_micros());
                out.push(v.direction as u8);
                put_u16(&mut out, v.abs_seqs.len() as u16);
                for s in &v.abs_seqs {
                    put_u64(&mut out, *s);
                }
                for p in &v.packets {
                    put_u16(&mut out, p.len() as u16);
                    out.extend_from_slice(p);
                }
            }
            Self::Final(f) => {
                out.extend_from_slice(&f.prev_hash.bytes);
                out.push(1);
                put_u64(&mut out, f.time.as_micros());
                out.push(f.reason as u8);
            }
        }
        Ok(out)
    }

    pub fn decode(kind: EnvelopeKind, bytes: &[u8]) -> Result<Self, BodyError> {
        let mut r = Reader::new(bytes);
        let body = match kind {
            EnvelopeKind::Initial => {
                let nonce = r.array::<NONCE_LEN>("nonce")?;
                let start_time = Timestamp(r.u64("start_time")?);
                let from_uri = read_str16(&mut r, "from uri")?;
                let to_uri = read_str16(&mut r, "to uri")?;
                let count = r.u8("map_count")?;
                let mut payload_map = Vec::with_capacity(count as usize);
                for _ in 0..count {
                    let payload_type = r.u8("payload type")?;
                    let codec_name = read_str16(&mut r, "codec name")?;
                    let clock_rate = r.u32("clock rate")?;
                    let channels = r.u8("channels")?;
                    payload_map.push(PayloadMapping {
                        payload_type,
                        codec_name,
                        clock_rate,
                        channels,
                    });
                }
                let meta = CallMeta {
                    nonce,
                    start_time,
                    from_uri,
                    to_uri,
                    payload_map,
                };
                check_meta(&meta)?;
                Self::Initial(meta)
            }
            EnvelopeKind::Voice => {
                let prev_hash = HashDigest::sha256(r.array("prev_hash")?);
                let index = r.u32("index")?;
                let time = Timestamp(r.u64("time")?);
                let direction = Direction::from_u8(r.u8("direction")?)
                    .ok_or_else(|| malformed("unknown direction"))?;
                let count = r.u16("count")? as usize;
                let abs_seqs = (0..count)
                    .map(|_| r.u64("abs_seq"))
                    .collect::<Result<Vec<_>, _>>()?;
                let mut packets = Vec::with_capacity(count);
                for _ in 0..count {
                    let len = r.u16("pkt_len")? as usize;
                    packets.push(r.bytes(len, "packet")?.to_vec());
                }
                let v = VoiceBody {
                    prev_hash,
                    index,
                    time,
                    direction,
                    abs_seqs,
                    packets,
                };
                check_voice(&v)?;
                Self::Voice(v)
            }
            EnvelopeKind::Final => {
                let prev_hash = HashDigest::sha256(r.array("prev_hash")?);
                if r.u8("last_flag")? != 1 {
                    return Err(malformed("last flag not set"));
                }
                let time = Timestamp(r.u64("time")?);
                let reason = TerminationReason::from_u8(r.u8("reason")?)
                    .ok_or_else(|| malformed("unknown termination reason"))?;
                Self::Final(FinalBody {
                    prev_hash,
                    time,
                    reason,
                })
            }
        };
        if !r.is_empty() {
            return Err(malformed("trailing bytes"));
        }
        Ok(body)
    }
}
