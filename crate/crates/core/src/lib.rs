//! Tamper-evident archiving of two-party RTP voice calls.
//!
//! A recorder groups the RTP packets of both call directions into intervals
//! of about a second, signs each interval and links it to its predecessor by
//! hash. The archive validates every interval as it arrives and stores the
//! chain; an offline verifier replays the same checks on stored files.

mod codec;

pub mod arc;
pub mod chain;
pub mod envelope;
pub mod harness;
pub mod netproto;
pub mod rtp;
pub mod time;
pub mod verify;
pub mod vsec;
