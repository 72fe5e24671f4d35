//! Extraction of `a=rtpmap` attributes from SDP bodies.

use std::collections::HashSet;

use thiserror::Error;

use super::body::PayloadMapping;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SdpError {
    #[error("payload type {0} mapped twice")]
    DuplicatePayloadType(u8),
    #[error("unparsable rtpmap attribute: {0:?}")]
    MalformedRtpmap(String),
}

fn parse_line(value: &str) -> Option<PayloadMapping> {
    let (pt, encoding) = value.trim().split_once(char::is_whitespace)?;
    let payload_type: u8 = pt.parse().ok().filter(|pt| *pt < 128)?;
    let mut parts = encoding.trim().split('/');
    let codec_name = parts.next().filter(|n| !n.is_empty())?.to_owned();
    let clock_rate: u32 = parts.next()?.parse().ok().filter(|r| *r > 0)?;
    let channels = match parts.next() {
        Some(c) => c.parse().ok().filter(|c| *c > 0)?,
        None => 1,
    };
    if parts.next().is_some() {
        return None;
    }
    Some(PayloadMapping {
        payload_type,
        codec_name,
        clock_rate,
        channels,
    })
}

/// Collects every `a=rtpmap:<pt> <codec>/<rate>[/<channels>]` line; other
/// lines are ignored.
pub fn parse_sdp_rtpmap(sdp: &str) -> Result<Vec<PayloadMapping>, SdpError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for line in sdp.lines() {
        let Some(value) = line.trim().strip_prefix("a=rtpmap:") else {
            continue;
        };
        let mapping = parse_line(value).ok_or_else(|| SdpError::MalformedRtpmap(line.trim().to_owned()))?;
        if !seen.insert(mapping.payload_type) {
            return Err(SdpError::DuplicatePayloadType(mapping.payload_type));
        }
        out.push(mapping);
    }
    Ok(out)
}
