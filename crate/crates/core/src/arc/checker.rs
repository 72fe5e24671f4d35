//! Per-frame validation shared by the live archive and the offline verifier.

use std::time::Duration;

use crate::chain::body::NONCE_LEN;
use crate::chain::{CallMeta, ChainError, ChainState, Direction, IntervalBody, VoiceBody};
use crate::envelope::{tsa_verify, verify_envelope, Certificate, Envelope, EnvelopeKind};
use crate::netproto::CheckCode;
use crate::rtp::{extend_counter, RtpPacket};
use crate::time::Timestamp;
use crate::vsec::{LossCounter, QosPolicy};

use super::report::CheckReport;

const TS_ORIGIN: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq)]
pub struct ArcConfig {
    pub interval: Duration,
    pub qos: QosPolicy,
}

impl Default for ArcConfig {
    fn default() -> Self {
        Self {
            interval: crate::chain::chunker::DEFAULT_INTERVAL,
            qos: QosPolicy::default(),
        }
    }
}

impl ArcConfig {
    /// Tolerance for both the initial time-stamp agreement and arrival drift.
    pub fn drift_bound_micros(&self) -> u64 {
        2 * self.interval.as_micros() as u64
    }
}

/// Answers whether a nonce is already archived.
pub type NonceLookup<'a> = &'a dyn Fn(&[u8; NONCE_LEN]) -> bool;

/// Where the archive clock and nonce index come from. Offline verification
/// has neither, so the corresponding checks are not applicable.
pub struct CheckContext<'a> {
    pub arrival: Option<Timestamp>,
    pub nonce_seen: Option<NonceLookup<'a>>,
}

impl CheckContext<'_> {
    pub fn offline() -> Self {
        Self {
            arrival: None,
            nonce_seen: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct MediaCursor {
    /// RTP sequence number minus absolute sequence number, mod 2^16. Fixed
    /// by the first packet since absolute numbering starts at zero.
    seq_offset: Option<u16>,
    highest_abs: Option<u64>,
    last_ext_ts: Option<u64>,
    /// Interval time and extended media timestamp of the first timed packet.
    anchor: Option<(Timestamp, u64)>,
}

/// A frame that passed every check, with its decoded body.
#[derive(Debug, Clone)]
pub struct Accepted {
    pub envelope: Envelope,
    pub body: IntervalBody,
}

#[derive(Debug, Clone)]
pub struct FrameChecker {
    trust_root: Certificate,
    tsa_cert: Certificate,
    config: ArcConfig,
    pinned: Option<Certificate>,
    meta: Option<CallMeta>,
    chain: Option<ChainState>,
    loss: [LossCounter; 2],
    media: [MediaCursor; 2],
    position: usize,
}

fn chain_code(e: &ChainError) -> CheckCode {
    match e {
        ChainError::ChainBroken => CheckCode::Chain,
        ChainError::IndexGap { .. } | ChainError::AlreadyFinished | ChainError::UnexpectedInitial => CheckCode::Chk3,
        ChainError::InterleaveViolation(_) | ChainError::TimeRegression { .. } => CheckCode::Interleave,
    }
}

impl FrameChecker {
    pub fn new(trust_root: Certificate, tsa_cert: Certificate, config: ArcConfig) -> Self {
        Self {
            trust_root,
            tsa_cert,
            config,
            pinned: None,
            meta: None,
            chain: None,
            loss: Default::default(),
            media: Default::default(),
            position: 0,
        }
    }

    pub fn config(&self) -> &ArcConfig {
        &self.config
    }

    pub fn meta(&self) -> Option<&CallMeta> {
        self.meta.as_ref()
    }

    pub fn pinned_leaf(&self) -> Option<&Certificate> {
        self.pinned.as_ref()
    }

    pub fn finished(&self) -> bool {
        self.chain.as_ref().is_some_and(|c| c.finished)
    }

    pub fn frames_seen(&self) -> usize {
        self.position
    }

    pub fn loss(&self, direction: Direction) -> LossCounter {
        self.loss[direction.index()]
    }

    /// Runs all checks on one frame. State advances only when every check
    /// passes; the position advances regardless.
    pub fn check(&mut self, encoded: &[u8], ctx: &CheckContext<'_>) -> (CheckReport, Option<Accepted>) {
        let mut report = CheckReport::new(self.position, encoded);
        self.position += 1;
        let accepted = self.run(encoded, ctx, &mut report);
        (report, accepted)
    }

    fn run(&mut self, encoded: &[u8], ctx: &CheckContext<'_>, report: &mut CheckReport) -> Option<Accepted> {
        let env = match Envelope::decode(encoded) {
            Ok(e) => e,
            Err(e) => {
                report.fail(CheckCode::Malformed, e.to_string());
                return None;
            }
        };
        report.kind = Some(env.kind);
        report.pass(CheckCode::Malformed);

        let initial = env.kind == EnvelopeKind::Initial;
        if self.chain.is_none() && !initial {
            report.fail(CheckCode::Chk3, format!("stream starts with a {} interval", env.kind));
            return None;
        }

        match verify_envelope(&env, &self.trust_root, self.pinned.as_ref()) {
            Ok(leaf) => {
                if initial && self.pinned.as_ref().is_some_and(|p| *p != leaf) {
                    report.fail(CheckCode::Chk2, "initial interval signed by a different recorder");
                    return None;
                }
                report.pass(CheckCode::Chk2);
                if initial && self.pinned.is_none() {
                    self.check_initial(leaf, &env, encoded, ctx, report)
                } else {
                    self.check_continuation(env, encoded, ctx, report)
                }
            }
            Err(e) => {
                report.fail(CheckCode::Chk2, e.to_string());
                None
            }
        }
    }

    fn check_initial(
        &mut self,
        leaf: Certificate,
        env: &Envelope,
        encoded: &[u8],
        ctx: &CheckContext<'_>,
        report: &mut CheckReport,
    ) -> Option<Accepted> {
        let body = match IntervalBody::decode(env.kind, &env.body) {
            Ok(b) => b,
            Err(e) => {
                report.fail(CheckCode::Malformed, e.to_string());
                return None;
            }
        };
        let IntervalBody::Initial(meta) = &body else {
            unreachable!("decoded by kind")
        };
        let token = env.tsa_token.as_ref().expect("decode enforces a token on initial envelopes");
        match tsa_verify(token, &env.signed_prefix(), &self.tsa_cert) {
            Err(e) => {
                report.fail(CheckCode::Chk1, e.to_string());
                return None;
            }
            Ok(tsa_time) => {
                let diff = tsa_time.abs_diff(meta.start_time);
                if diff > self.config.drift_bound_micros() {
                    report.fail(
                        CheckCode::Chk1,
                        format!("time-stamp {tsa_time} and start time {} differ by {diff} us", meta.start_time),
                    );
                    return None;
                }
                report.pass(CheckCode::Chk1);
            }
        }
        if let Some(seen) = ctx.nonce_seen {
            if seen(&meta.nonce) {
                report.fail(CheckCode::Nonce, format!("nonce {} already archived", hex::encode(meta.nonce)));
                return None;
            }
            report.pass(CheckCode::Nonce);
        }

        self.pinned = Some(leaf);
        self.meta = Some(meta.clone());
        self.chain = Some(ChainState::start(encoded, meta.start_time));
        Some(Accepted {
            envelope: env.clone(),
            body,
        })
    }

    fn check_continuation(
        &mut self,
        env: Envelope,
        encoded: &[u8],
        ctx: &CheckContext<'_>,
        report: &mut CheckReport,
    ) -> Option<Accepted> {
        let body = match IntervalBody::decode(env.kind, &env.body) {
            Ok(b) => b,
            Err(e) => {
                report.fail(CheckCode::Malformed, e.to_string());
                return None;
            }
        };
        let mut chain = self.chain.clone().expect("initial accepted");
        if let Err(e) = chain.step(encoded, &body) {
            report.fail(chain_code(&e), e.to_string());
            return None;
        }
        for code in [CheckCode::Chain, CheckCode::Chk3, CheckCode::Interleave] {
            report.pass(code);
        }

        let mut loss = self.loss;
        if let IntervalBody::Voice(v) = &body {
            let counter = &mut loss[v.direction.index()];
            for &abs in &v.abs_seqs {
                counter.record(abs);
            }
            if counter.violates(&self.config.qos) {
                report.fail(
                    CheckCode::Chk4,
                    format!("{} of {} packets lost on {}", counter.lost(), counter.expected(), v.direction),
                );
                return None;
            }
            report.pass(CheckCode::Chk4);
        }

        if let Some(arrival) = ctx.arrival {
            let time = body.time();
            let drift = time.abs_diff(arrival);
            if drift > self.config.drift_bound_micros() {
                report.fail(
                    CheckCode::Chk5,
                    format!("interval time {time} is {drift} us away from arrival {arrival}"),
                );
                return None;
            }
            report.pass(CheckCode::Chk5);
        }

        let mut media = self.media;
        if let IntervalBody::Voice(v) = &body {
            if let Err(detail) = self.check_rtp(v, &mut media[v.direction.index()]) {
                report.fail(CheckCode::Chk6, detail);
                return None;
            }
            report.pass(CheckCode::Chk6);
        }

        self.chain = Some(chain);
        self.loss = loss;
        self.media = media;
        Some(Accepted { envelope: env, body })
    }

    fn check_rtp(&self, v: &VoiceBody, cursor: &mut MediaCursor) -> Result<(), String> {
        let meta = self.meta.as_ref().expect("initial accepted");
        let bound = self.config.drift_bound_micros() as i128;
        for (k, (&abs, raw)) in v.abs_seqs.iter().zip(&v.packets).enumerate() {
            let p = RtpPacket::parse(raw).map_err(|e| format!("packet {k}: {e}"))?;
            let offset = p.sequence.wrapping_sub(abs as u16);
            if *cursor.seq_offset.get_or_insert(offset) != offset {
                return Err(format!("packet {k}: sequence {} does not match absolute {abs}", p.sequence));
            }
            if cursor.highest_abs.is_some_and(|h| abs <= h) {
                return Err(format!("packet {k}: absolute sequence {abs} repeats an earlier interval"));
            }
            cursor.highest_abs = Some(abs);
            let ext_ts = match cursor.last_ext_ts {
                None => TS_ORIGIN + p.timestamp as u64,
                Some(last) => {
                    let ext = extend_counter(last, p.timestamp as u64, 32);
                    if ext < last {
                        return Err(format!("packet {k}: media timestamp goes backwards"));
                    }
                    ext
                }
            };
            cursor.last_ext_ts = Some(ext_ts);
            let Some(rate) = meta.clock_rate(p.payload_type).filter(|r| *r > 0) else {
                continue;
            };
            let (anchor_time, anchor_ts) = *cursor.anchor.get_or_insert((v.time, ext_ts));
            let expected =
                anchor_time.as_micros() as i128 + (ext_ts as i128 - anchor_ts as i128) * 1_000_000 / rate as i128;
            let off = expected - v.time.as_micros() as i128;
            if off.abs() > bound {
                return Err(format!("packet {k}: media time is {off} us away from the interval time"));
            }
        }
        Ok(())
    }
}
