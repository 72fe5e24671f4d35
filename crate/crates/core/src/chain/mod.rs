//! Interval bodies, the chunker that produces them and the chain rules that
//! bind them together.

pub mod body;
pub mod chunker;
pub mod sdp;
pub mod state;

pub use body::{
    BodyError, CallMeta, Direction, FinalBody, IntervalBody, PayloadMapping, TerminationReason, VoiceBody,
};
pub use chunker::{BufferStats, Chunker, Flush};
pub use sdp::{parse_sdp_rtpmap, SdpError};
pub use state::{ChainError, ChainState};
