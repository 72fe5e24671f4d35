//! Framing between recorder, archive and time-stamping authority over a
//! reliable ordered byte stream.
//!
//! Recorder to archive: a handshake `"SVAP" | version u8 = 1 | call_id[16]`,
//! then frames `frame_len u32 | encoded envelope`. The archive answers every
//! frame with one byte: `0x00` for ACK or `0xE0 + code` for REJECT, after
//! which it closes the connection.
//!
//! Time-stamp requests are `"SVAT" | digest[32]`, answered with
//! `status u8 | token_len u32 | token` (status 0 = issued).

use std::fmt;
use std::io::{self, Read, Write};

pub const HANDSHAKE_MAGIC: &[u8; 4] = b"SVAP";
pub const PROTOCOL_VERSION: u8 = 1;
pub const TSA_MAGIC: &[u8; 4] = b"SVAT";
pub const ACK: u8 = 0x00;
pub const REJECT_BASE: u8 = 0xE0;
/// Frames larger than this are refused before allocation.
pub const MAX_FRAME_LEN: u32 = 16 * 1024 * 1024;

pub type CallId = [u8; 16];

/// Identifies the check that rejected a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum CheckCode {
    /// Initial interval time-stamp and time agreement.
    Chk1 = 1,
    /// Envelope signature.
    Chk2 = 2,
    /// Chain position: index continuity, nothing after the final interval.
    Chk3 = 3,
    /// Packet loss above the QoS threshold.
    Chk4 = 4,
    /// Interval time against the archive clock.
    Chk5 = 5,
    /// RTP sequence and timestamp consistency.
    Chk6 = 6,
    /// Previous-interval hash mismatch.
    Chain = 7,
    /// Direction alternation and time ordering.
    Interleave = 8,
    /// Nonce already archived.
    Nonce = 9,
    Malformed = 10,
    Storage = 11,
}

impl CheckCode {
    pub const ALL: [CheckCode; 11] = [
        CheckCode::Chk1,
        CheckCode::Chk2,
        CheckCode::Chk3,
        CheckCode::Chk4,
        CheckCode::Chk5,
        CheckCode::Chk6,
        CheckCode::Chain,
        CheckCode::Interleave,
        CheckCode::Nonce,
        CheckCode::Malformed,
        CheckCode::Storage,
    ];

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ALL.get((v as usize).checked_sub(1)?).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Chk1 => "CHK1",
            Self::Chk2 => "CHK2",
            Self::Chk3 => "CHK3",
            Self::Chk4 => "CHK4",
            Self::Chk5 => "CHK5",
            Self::Chk6 => "CHK6",
            Self::Chain => "CHAIN",
            Self::Interleave => "INTERLEAVE",
            Self::Nonce => "NONCE",
            Self::Malformed => "MALFORMED",
            Self::Storage => "STORAGE",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name().eq_ignore_ascii_case(name))
    }
}

impl fmt::Display for CheckCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Response {
    Ack,
    Reject(CheckCode),
}

impl Response {
    pub fn to_byte(self) -> u8 {
        match self {
            Response::Ack => ACK,
            Response::Reject(code) => REJECT_BASE + code as u8,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        if b == ACK {
            return Some(Response::Ack);
        }
        CheckCode::from_u8(b.checked_sub(REJECT_BASE)?).map(Response::Reject)
    }
}

fn invalid(msg: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.to_owned())
}

pub fn write_handshake<W: Write>(w: &mut W, call_id: &CallId) -> io::Result<()> {
    let mut buf = [0u8; 21];
    buf[..4].copy_from_slice(HANDSHAKE_MAGIC);
    buf[4] = PROTOCOL_VERSION;
    buf[5..].copy_from_slice(call_id);
    w.write_all(&buf)?;
    w.flush()
}

pub fn read_handshake<R: Read>(r: &mut R) -> io::Result<CallId> {
    let mut buf = [0u8; 21];
    r.read_exact(&mut buf)?;
    if &buf[..4] != HANDSHAKE_MAGIC {
        return Err(invalid("bad handshake magic"));
    }
    if buf[4] != PROTOCOL_VERSION {
        return Err(invalid("unsupported protocol version"));
    }
    let mut id = [0u8; 16];
    id.copy_from_slice(&buf[5..]);
    Ok(id)
}

pub fn write_frame<W: Write>(w: &mut W, frame: &[u8]) -> io::Result<()> {
    let len = u32::try_from(frame.len()).map_err(|_| invalid("frame too large"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(frame)?;
    w.flush()
}

/// Reads one frame; `Ok(None)` on a clean end of stream before a length.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..])? {
            0 if got == 0 => return Ok(None),
            0 => return Err(io::ErrorKind::UnexpectedEof.into()),
            n => got += n,
        }
    }
    let len = u32::from_be_bytes(len);
    if len > MAX_FRAME_LEN {
        return Err(invalid("frame exceeds size limit"));
    }
    let mut frame = vec![0u8; len as usize];
    r.read_exact(&mut frame)?;
    Ok(Some(frame))
}

pub fn write_tsa_request<W: Write>(w: &mut W, digest: &[u8; 32]) -> io::Result<()> {
    w.write_all(TSA_MAGIC)?;
    w.write_all(digest)?;
    w.flush()
}

pub fn read_tsa_request<R: Read>(r: &mut R) -> io::Result<[u8; 32]> {
    let mut buf = [0u8; 36];
    r.read_exact(&mut buf)?;
    if &buf[..4] != TSA_MAGIC {
        return Err(invalid("bad time-stamp request magic"));
    }
    let mut d = [0u8; 32];
    d.copy_from_slice(&buf[4..]);
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn response_bytes() {
        assert_eq!(Response::Ack.to_byte(), 0x00);
        assert_eq!(Response::Reject(CheckCode::Chk1).to_byte(), 0xE1);
        assert_eq!(Response::Reject(CheckCode::Storage).to_byte(), 0xEB);
        for code in CheckCode::ALL {
            let r = Response::Reject(code);
            assert_eq!(Response::from_byte(r.to_byte()), Some(r));
        }
        assert_eq!(Response::from_byte(0xE0), None);
        assert_eq!(Response::from_byte(0x01), None);
    }

    #[test]
    fn handshake_and_frames() {
        let mut buf = Vec::new();
        write_handshake(&mut buf, &[9; 16]).unwrap();
        write_frame(&mut buf, b"hello").unwrap();
        write_frame(&mut buf, b"").unwrap();
        assert_eq!(buf.len(), 21 + 9 + 4);
        let mut r = Cursor::new(buf);
        assert_eq!(read_handshake(&mut r).unwrap(), [9; 16]);
        assert_eq!(read_frame(&mut r).unwrap().unwrap(), b"hello");
        assert_eq!(read_frame(&mut r).unwrap().unwrap(), b"");
        assert!(read_frame(&mut r).unwrap().is_none());
    }

    #[test]
    fn truncated_frame_is_error() {
        let mut r = Cursor::new(vec![0, 0, 0, 5, 1, 2]);
        assert!(read_frame(&mut r).is_err());
        let mut r = Cursor::new(vec![0, 0]);
        assert!(read_frame(&mut r).is_err());
    }

    #[test]
    fn names_round_trip() {
        for c in CheckCode::ALL {
            assert_eq!(CheckCode::from_name(c.name()), Some(c));
        }
    }
}
