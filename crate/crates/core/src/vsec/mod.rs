//! The recorder: turns the two RTP directions of a call into a signed,
//! hash-chained stream of envelopes sent to the archive.
//!
//! Per packet the session parses the datagram, runs it through the replay
//! window of its direction, hands accepted packets to the chunker and seals
//! every flushed interval into a voice envelope. Loss above the QoS
//! threshold, inconsistent media timing or a run of undecodable datagrams
//! end the call with a final envelope naming the reason.

pub mod qos;
pub mod transport;

use std::sync::Arc;
use std::time::Duration;

use log::{debug, warn};
use rand::RngCore;
use thiserror::Error;

use crate::chain::body::{NONCE_LEN, VoiceBody};
use crate::chain::{
    BufferStats, CallMeta, Chunker, Direction, FinalBody, Flush, IntervalBody, PayloadMapping, TerminationReason,
};
use crate::envelope::{envelope_hash, sign_envelope, EnvelopeKind, HashDigest, SignerIdentity, TsaClient};
use crate::netproto::{CallId, CheckCode};
use crate::rtp::{ReplayWindow, RtpPacket, WindowDecision};
use crate::time::Timestamp;
pub use qos::{LossCounter, QosAction, QosPolicy};
pub use transport::{ArcTransport, MemoryTransport, TcpArcTransport, TcpTsaClient, TransportError};

#[derive(Debug, Clone, PartialEq)]
pub struct RecorderConfig {
    pub interval: Duration,
    pub qos: QosPolicy,
    /// Consecutive undecodable datagrams tolerated before the call ends.
    pub parse_failure_cap: u32,
    /// When false the recorder skips QoS, media-timing and silent-direction
    /// handling. Models a tampered recorder for tests.
    pub enforce_checks: bool,
}

impl Default for RecorderConfig {
    fn default() -> Self {
        Self {
            interval: crate::chain::chunker::DEFAULT_INTERVAL,
            qos: QosPolicy::default(),
            parse_failure_cap: 10,
            enforce_checks: true,
        }
    }
}

impl RecorderConfig {
    pub fn drift_bound(&self) -> Duration {
        self.interval * 2
    }
}

/// Call parameters known before the first interval.
#[derive(Debug, Clone)]
pub struct CallSetup {
    pub call_id: CallId,
    pub from_uri: String,
    pub to_uri: String,
    pub payload_map: Vec<PayloadMapping>,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("time-stamping authority unavailable: {0}")]
    TsaUnavailable(String),
    #[error("archive rejected the stream with {0}")]
    ArcRejected(CheckCode),
    #[error("archive link failed: {0}")]
    Transport(String),
    #[error("session already closed")]
    AlreadyClosed,
    #[error("could not encode interval: {0}")]
    Encoding(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    Streaming,
    Closed(TerminationReason),
    /// The archive refused a frame or the link broke.
    Aborted,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SessionCounters {
    pub signatures: u64,
    pub envelopes_sent: u64,
    pub bytes_sent: u64,
    pub packets_accepted: u64,
    pub replays_dropped: u64,
    pub late_dropped: u64,
    pub parse_failures: u64,
}

pub struct RecorderSession<T> {
    call_id: CallId,
    meta: CallMeta,
    identity: Arc<SignerIdentity>,
    windows: [ReplayWindow; 2],
    chunker: Chunker,
    send_prev_hash: HashDigest,
    next_index: u32,
    qos: [LossCounter; 2],
    config: RecorderConfig,
    transport: T,
    state: SessionState,
    consecutive_parse_failures: u32,
    counters: SessionCounters,
}

impl<T: ArcTransport> RecorderSession<T> {
    /// Builds, signs, time-stamps and sends the initial envelope.
    pub fn start<R: RngCore>(
        setup: CallSetup,
        identity: Arc<SignerIdentity>,
        tsa: &mut dyn TsaClient,
        transport: T,
        config: RecorderConfig,
        now: Timestamp,
        rng: &mut R,
    ) -> Result<Self, SessionError> {
        let mut nonce = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut nonce);
        let meta = CallMeta {
            nonce,
            start_time: now,
            from_uri: setup.from_uri,
            to_uri: setup.to_uri,
            payload_map: setup.payload_map,
        };
        let body = IntervalBody::Initial(meta.clone())
            .encode()
            .map_err(|e| SessionError::Encoding(e.to_string()))?;
        let mut env = sign_envelope(&identity, EnvelopeKind::Initial, body, true)
            .map_err(|e| SessionError::Encoding(e.to_string()))?;
        let token = tsa
            .stamp(&env.signed_prefix())
            .map_err(|e| SessionError::TsaUnavailable(e.to_string()))?;
        env.tsa_token = Some(token);
        let encoded = env.encode().map_err(|e| SessionError::Encoding(e.to_string()))?;

        let mut chunker = Chunker::new(config.interval);
        if !config.enforce_checks {
            chunker = chunker.without_silent_fill();
        }
        let drift = config.drift_bound();
        let mut session = Self {
            call_id: setup.call_id,
            meta,
            identity,
            windows: [ReplayWindow::new(drift), ReplayWindow::new(drift)],
            chunker,
            send_prev_hash: envelope_hash(&encoded),
            next_index: 1,
            qos: Default::default(),
            config,
            transport,
            state: SessionState::Streaming,
            consecutive_parse_failures: 0,
            counters: SessionCounters {
                signatures: 1,
                ..Default::default()
            },
        };
        session.transmit(&encoded, now)?;
        Ok(session)
    }

    pub fn call_id(&self) -> &CallId {
        &self.call_id
    }

    pub fn meta(&self) -> &CallMeta {
        &self.meta
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn counters(&self) -> SessionCounters {
        self.counters
    }

    pub fn buffer_stats(&self) -> BufferStats {
        self.chunker.stats()
    }

    pub fn loss(&self, direction: Direction) -> LossCounter {
        self.qos[direction.index()]
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    pub fn into_transport(self) -> T {
        self.transport
    }

    fn transmit(&mut self, encoded: &[u8], now: Timestamp) -> Result<(), SessionError> {
        match self.transport.send(encoded, now) {
            Ok(()) => {
                self.counters.envelopes_sent += 1;
                self.counters.bytes_sent += encoded.len() as u64;
                Ok(())
            }
            Err(e) => {
                self.state = SessionState::Aborted;
                self.chunker.discard();
                Err(match e {
                    TransportError::Rejected(code) => SessionError::ArcRejected(code),
                    TransportError::Io(e) => SessionError::Transport(e.to_string()),
                })
            }
        }
    }

    fn seal(&mut self, kind: EnvelopeKind, body: IntervalBody, now: Timestamp) -> Result<Vec<u8>, SessionError> {
        let body = body.encode().map_err(|e| SessionError::Encoding(e.to_string()))?;
        let env = sign_envelope(&self.identity, kind, body, false)
            .map_err(|e| SessionError::Encoding(e.to_string()))?;
        self.counters.signatures += 1;
        let encoded = env.encode().map_err(|e| SessionError::Encoding(e.to_string()))?;
        self.transmit(&encoded, now)?;
        self.send_prev_hash = envelope_hash(&encoded);
        Ok(encoded)
    }

    fn emit_flushes(&mut self, flushes: Vec<Flush>, now: Timestamp) -> Result<Vec<Vec<u8>>, SessionError> {
        let mut out = Vec::with_capacity(flushes.len());
        for f in flushes {
            let body = IntervalBody::Voice(VoiceBody {
                prev_hash: self.send_prev_hash,
                index: self.next_index,
                time: f.time,
                direction: f.direction,
                abs_seqs: f.abs_seqs,
                packets: f.packets,
            });
            out.push(self.seal(EnvelopeKind::Voice, body, now)?);
            self.next_index += 1;
        }
        Ok(out)
    }

    fn ensure_streaming(&self) -> Result<(), SessionError> {
        match self.state {
            SessionState::Streaming => Ok(()),
            _ => Err(SessionError::AlreadyClosed),
        }
    }

    /// Seals any interval whose window has expired without new packets.
    pub fn tick(&mut self, now: Timestamp) -> Result<Vec<Vec<u8>>, SessionError> {
        self.ensure_streaming()?;
        let flushes = self.chunker.poll(now);
        self.emit_flushes(flushes, now)
    }

    /// Processes one datagram of `direction`. Returns the envelopes sent as a
    /// consequence, which may end with a final envelope.
    pub fn ingest(
        &mut self,
        direction: Direction,
        datagram: &[u8],
        now: Timestamp,
    ) -> Result<Vec<Vec<u8>>, SessionError> {
        self.ensure_streaming()?;
        let packet = match RtpPacket::parse(datagram) {
            Ok(p) => p,
            Err(e) => {
                self.counters.parse_failures += 1;
                self.consecutive_parse_failures += 1;
                debug!("undecodable datagram on {direction}: {e}");
                if self.consecutive_parse_failures >= self.config.parse_failure_cap {
                    warn!("{} consecutive undecodable datagrams", self.consecutive_parse_failures);
                    return self.close(TerminationReason::ProtocolOrNetworkError, now);
                }
                return Ok(Vec::new());
            }
        };
        self.consecutive_parse_failures = 0;

        let rate = self
            .meta
            .clock_rate(packet.payload_type)
            .filter(|_| self.config.enforce_checks);
        let abs_seq = match self.windows[direction.index()].accept(&packet, now, rate) {
            WindowDecision::Accept(abs) => abs,
            WindowDecision::Replay => {
                self.counters.replays_dropped += 1;
                return Ok(Vec::new());
            }
            WindowDecision::Inconsistent => {
                warn!("media timing inconsistent on {direction}, terminating");
                return self.close(TerminationReason::TamperDetected, now);
            }
        };

        let mut flushes = self.chunker.poll(now);
        match self.chunker.push(direction, abs_seq, packet.into_bytes(), now) {
            Ok(more) => {
                flushes.extend(more);
                self.counters.packets_accepted += 1;
                self.qos[direction.index()].record(abs_seq);
            }
            Err(late) => {
                // Reordered behind an already sealed packet; counted as lost.
                debug!("{late}");
                self.counters.late_dropped += 1;
            }
        }
        let mut out = self.emit_flushes(flushes, now)?;

        if self.config.enforce_checks && self.qos[direction.index()].violates(&self.config.qos) {
            warn!(
                "packet loss {:.4} on {direction} above threshold",
                self.qos[direction.index()].loss_fraction()
            );
            out.extend(self.close(TerminationReason::QosViolation, now)?);
        }
        Ok(out)
    }

    /// Ends the call. After QoS or tamper terminations the open interval is
    /// discarded, otherwise it is sealed first. The last envelope returned
    /// is the final one.
    pub fn close(&mut self, reason: TerminationReason, now: Timestamp) -> Result<Vec<Vec<u8>>, SessionError> {
        self.ensure_streaming()?;
        let mut out = match reason {
            TerminationReason::QosViolation | TerminationReason::TamperDetected => {
                let dropped = self.chunker.discard();
                debug!("discarded {dropped} packets of the open interval");
                Vec::new()
            }
            _ => {
                let flushes = self.chunker.flush();
                self.emit_flushes(flushes, now)?
            }
        };
        let body = IntervalBody::Final(FinalBody {
            prev_hash: self.send_prev_hash,
            time: now,
            reason,
        });
        out.push(self.seal(EnvelopeKind::Final, body, now)?);
        self.state = SessionState::Closed(reason);
        Ok(out)
    }
}
