//! Offline verification, inspection and extraction of call files.
//!
//! The same frame checker as the live archive runs over the stored records.
//! There is no arrival clock and no nonce index offline, so those checks are
//! reported as not applicable; time ordering is still enforced by the chain.

use std::fmt::{self, Write as _};
use std::fs;
use std::io;
use std::path::Path;

use log::warn;
use serde::Serialize;
use thiserror::Error;

use crate::arc::{split_records, ArcConfig, CheckContext, CheckReport, FrameChecker};
use crate::chain::{CallMeta, Direction, IntervalBody, TerminationReason};
use crate::envelope::{Certificate, Envelope};
use crate::netproto::CheckCode;
use crate::rtp::RtpPacket;
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerificationStatus {
    CompleteVerified,
    IncompletePrefixVerified,
    /// Zero-based record position of the first failing envelope.
    Rejected { position: usize, code: CheckCode },
}

impl VerificationStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            Self::CompleteVerified => 0,
            Self::IncompletePrefixVerified => 2,
            Self::Rejected { .. } => 1,
        }
    }
}

impl fmt::Display for VerificationStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::CompleteVerified => f.write_str("complete, verified"),
            Self::IncompletePrefixVerified => f.write_str("incomplete, verified prefix"),
            Self::Rejected { position, code } => write!(f, "rejected at position {position} ({code})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallSummary {
    pub nonce: [u8; 16],
    pub start_time: Timestamp,
    pub from_uri: String,
    pub to_uri: String,
    /// From the start time to the last verified interval.
    pub duration_micros: u64,
    pub voice_intervals: usize,
    pub packets: [usize; 2],
    pub termination: Option<TerminationReason>,
}

#[derive(Debug, Clone)]
pub struct VerificationResult {
    pub status: VerificationStatus,
    pub summary: Option<CallSummary>,
    pub reports: Vec<CheckReport>,
}

/// Verifies a stored call file.
pub fn verify_archive(file: &[u8], trust_root: &Certificate, tsa_cert: &Certificate, config: &ArcConfig) -> VerificationResult {
    let split = split_records(file);
    let mut checker = FrameChecker::new(trust_root.clone(), tsa_cert.clone(), config.clone());
    let ctx = CheckContext::offline();
    let mut reports = Vec::with_capacity(split.records.len());
    let mut summary: Option<CallSummary> = None;
    let mut last_time = None;

    for rec in &split.records {
        let (report, accepted) = checker.check(rec, &ctx);
        let failure = report.failure().map(|(c, _)| c);
        let position = report.position;
        reports.push(report);
        if let Some(code) = failure {
            return VerificationResult {
                status: VerificationStatus::Rejected { position, code },
                summary,
                reports,
            };
        }
        let acc = accepted.expect("passed frames are accepted");
        match &acc.body {
            IntervalBody::Initial(m) => {
                summary = Some(CallSummary {
                    nonce: m.nonce,
                    start_time: m.start_time,
                    from_uri: m.from_uri.clone(),
                    to_uri: m.to_uri.clone(),
                    duration_micros: 0,
                    voice_intervals: 0,
                    packets: [0; 2],
                    termination: None,
                });
            }
            IntervalBody::Voice(v) => {
                let s = summary.as_mut().expect("initial first");
                s.voice_intervals += 1;
                s.packets[v.direction.index()] += v.packets.len();
            }
            IntervalBody::Final(f) => {
                summary.as_mut().expect("initial first").termination = Some(f.reason);
            }
        }
        last_time = Some(acc.body.time());
    }
    if let (Some(s), Some(t)) = (summary.as_mut(), last_time) {
        s.duration_micros = t.as_micros().saturating_sub(s.start_time.as_micros());
    }

    let status = if let Some(_torn) = split.torn_at {
        VerificationStatus::Rejected {
            position: split.records.len(),
            code: CheckCode::Malformed,
        }
    } else if checker.finished() {
        VerificationStatus::CompleteVerified
    } else {
        VerificationStatus::IncompletePrefixVerified
    };
    VerificationResult {
        status,
        summary,
        reports,
    }
}

pub fn verify_file(
    path: &Path,
    trust_root: &Certificate,
    tsa_cert: &Certificate,
    config: &ArcConfig,
) -> io::Result<VerificationResult> {
    Ok(verify_archive(&fs::read(path)?, trust_root, tsa_cert, config))
}

/// One line per stored envelope after a status header. Columns: position,
/// kind, direction, interval time, packet count, hash prefix, check status.
pub fn inspect(file: &[u8], trust_root: &Certificate, tsa_cert: &Certificate, config: &ArcConfig) -> String {
    let result = verify_archive(file, trust_root, tsa_cert, config);
    let records = split_records(file).records;
    let mut out = String::new();
    let _ = writeln!(out, "status: {}", result.status);
    if let Some(s) = &result.summary {
        let _ = writeln!(
            out,
            "call: {} -> {} start {} nonce {}",
            s.from_uri,
            s.to_uri,
            s.start_time,
            hex::encode(s.nonce)
        );
    }
    let _ = writeln!(
        out,
        "{:>5}  {:<7}  {:<4}  {:>18}  {:>7}  {:<16}  check",
        "pos", "kind", "dir", "time", "packets", "hash"
    );
    for (pos, rec) in records.iter().enumerate() {
        let env = Envelope::decode(rec).ok();
        let body = env.as_ref().and_then(|e| IntervalBody::decode(e.kind, &e.body).ok());
        let kind = env.as_ref().map_or("?".to_owned(), |e| e.kind.to_string());
        let (dir, packets) = match &body {
            Some(IntervalBody::Voice(v)) => (v.direction.to_string(), v.packets.len().to_string()),
            Some(_) => ("-".to_owned(), "-".to_owned()),
            None => ("?".to_owned(), "?".to_owned()),
        };
        let time = body.as_ref().map_or("?".to_owned(), |b| b.time().to_string());
        let hash = crate::envelope::envelope_hash(rec).to_hex();
        let check = match result.reports.get(pos).map(|r| r.failure()) {
            Some(None) => "ok".to_owned(),
            Some(Some((code, detail))) => format!("{code}: {detail}"),
            None => "unchecked".to_owned(),
        };
        let _ = writeln!(
            out,
            "{pos:>5}  {kind:<7}  {dir:<4}  {time:>18}  {packets:>7}  {:<16}  {check}",
            &hash[..16]
        );
    }
    out
}

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("archive rejected: {0}")]
    Rejected(VerificationStatus),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractedPacket {
    pub abs_seq: u64,
    pub interval_time: Timestamp,
    pub payload_type: Option<u8>,
    /// Codec name from the call's payload map.
    pub codec: Option<String>,
    pub raw: Vec<u8>,
}

impl ExtractedPacket {
    /// Codec name, or the numeric payload type when it is not mapped.
    pub fn label(&self) -> String {
        match (&self.codec, self.payload_type) {
            (Some(c), _) => c.clone(),
            (None, Some(pt)) => pt.to_string(),
            (None, None) => "unparsable".to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExtractWarning {
    UnknownPayloadType { payload_type: u8, packets: usize },
}

#[derive(Debug, Clone)]
pub struct Extraction {
    pub status: VerificationStatus,
    pub meta: CallMeta,
    pub channels: [Vec<ExtractedPacket>; 2],
    pub warnings: Vec<ExtractWarning>,
}

/// Pulls both directions out of a call file that verified, completely or as
/// a prefix.
pub fn extract_streams(
    file: &[u8],
    trust_root: &Certificate,
    tsa_cert: &Certificate,
    config: &ArcConfig,
) -> Result<Extraction, ExtractError> {
    let result = verify_archive(file, trust_root, tsa_cert, config);
    if matches!(result.status, VerificationStatus::Rejected { .. }) {
        return Err(ExtractError::Rejected(result.status));
    }
    let mut meta = None;
    let mut channels: [Vec<ExtractedPacket>; 2] = Default::default();
    let mut unknown = std::collections::BTreeMap::<u8, usize>::new();
    for rec in split_records(file).records {
        let env = Envelope::decode(rec).expect("verified");
        match IntervalBody::decode(env.kind, &env.body).expect("verified") {
            IntervalBody::Initial(m) => meta = Some(m),
            IntervalBody::Voice(v) => {
                let m = meta.as_ref().expect("initial first");
                for (abs_seq, raw) in v.abs_seqs.into_iter().zip(v.packets) {
                    let pt = RtpPacket::parse(&raw).ok().map(|p| p.payload_type);
                    let codec = pt.and_then(|pt| m.mapping(pt)).map(|e| e.codec_name.clone());
                    if let (Some(pt), None) = (pt, &codec) {
                        *unknown.entry(pt).or_default() += 1;
                    }
                    channels[v.direction.index()].push(ExtractedPacket {
                        abs_seq,
                        interval_time: v.time,
                        payload_type: pt,
                        codec,
                        raw,
                    });
                }
            }
            IntervalBody::Final(_) => {}
        }
    }
    let warnings = unknown
        .into_iter()
        .map(|(payload_type, packets)| {
            warn!("payload type {payload_type} not in the call's payload map ({packets} packets)");
            ExtractWarning::UnknownPayloadType { payload_type, packets }
        })
        .collect();
    // An empty prefix has nothing to extract but is not an error.
    let meta = meta.unwrap_or_else(|| CallMeta {
        nonce: [0; 16],
        start_time: Timestamp(0),
        from_uri: String::new(),
        to_uri: String::new(),
        payload_map: Vec::new(),
    });
    Ok(Extraction {
        status: result.status,
        meta,
        channels,
        warnings,
    })
}

#[derive(Serialize)]
struct MetaJson<'a> {
    status: String,
    nonce: String,
    start_time_micros: u64,
    from_uri: &'a str,
    to_uri: &'a str,
    payload_map: Vec<PayloadJson<'a>>,
    packets: [usize; 2],
    files: [&'static str; 2],
}

#[derive(Serialize)]
struct PayloadJson<'a> {
    payload_type: u8,
    codec: &'a str,
    clock_rate: u32,
    channels: u8,
}

pub const CHANNEL_FILES: [&str; 2] = ["a_to_b.rtp", "b_to_a.rtp"];

/// Writes `meta.json` and one record file per direction, each record being
/// `abs_seq u64 | interval_time u64 | len u16 | raw RTP`.
pub fn write_extraction(x: &Extraction, out_dir: &Path) -> io::Result<()> {
    fs::create_dir_all(out_dir)?;
    let meta = MetaJson {
        status: x.status.to_string(),
        nonce: hex::encode(x.meta.nonce),
        start_time_micros: x.meta.start_time.as_micros(),
        from_uri: &x.meta.from_uri,
        to_uri: &x.meta.to_uri,
        payload_map: x
            .meta
            .payload_map
            .iter()
            .map(|m| PayloadJson {
                payload_type: m.payload_type,
                codec: &m.codec_name,
                clock_rate: m.clock_rate,
                channels: m.channels,
            })
            .collect(),
        packets: [x.channels[0].len(), x.channels[1].len()],
        files: CHANNEL_FILES,
    };
    fs::write(out_dir.join("meta.json"), serde_json::to_vec_pretty(&meta).map_err(io::Error::other)?)?;
    for d in Direction::BOTH {
        let mut buf = Vec::new();
        for p in &x.channels[d.index()] {
            buf.extend_from_slice(&p.abs_seq.to_be_bytes());
            buf.extend_from_slice(&p.interval_time.as_micros().to_be_bytes());
            buf.extend_from_slice(&(p.raw.len() as u16).to_be_bytes());
            buf.extend_from_slice(&p.raw);
        }
        fs::write(out_dir.join(CHANNEL_FILES[d.index()]), buf)?;
    }
    Ok(())
}
