//! Links from the recorder to the archive and to the time-stamping authority.

use std::io::{self, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use thiserror::Error;

use crate::envelope::tsa::{covered_digest, TsaClient, TsaError, TsaToken};
use crate::netproto::{self, CallId, CheckCode, Response};
use crate::time::Timestamp;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("archive rejected frame with {0}")]
    Rejected(CheckCode),
    #[error("transport failure: {0}")]
    Io(#[from] io::Error),
}

/// Ordered delivery of encoded envelopes to the archive.
pub trait ArcTransport {
    fn send(&mut self, frame: &[u8], now: Timestamp) -> Result<(), TransportError>;
}

/// Collects frames with their send time. Used for in-process pipelines.
#[derive(Debug, Default, Clone)]
pub struct MemoryTransport {
    pub frames: Vec<(Timestamp, Vec<u8>)>,
}

impl ArcTransport for MemoryTransport {
    fn send(&mut self, frame: &[u8], now: Timestamp) -> Result<(), TransportError> {
        self.frames.push((now, frame.to_vec()));
        Ok(())
    }
}

impl<T: ArcTransport + ?Sized> ArcTransport for &mut T {
    fn send(&mut self, frame: &[u8], now: Timestamp) -> Result<(), TransportError> {
        (**self).send(frame, now)
    }
}

/// Archive connection over TCP; waits for the ACK of every frame.
pub struct TcpArcTransport {
    stream: TcpStream,
    reader: BufReader<TcpStream>,
}

impl TcpArcTransport {
    pub fn connect<A: ToSocketAddrs>(addr: A, call_id: &CallId) -> io::Result<Self> {
        let mut stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        netproto::write_handshake(&mut stream, call_id)?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(Self { stream, reader })
    }
}

impl ArcTransport for TcpArcTransport {
    fn send(&mut self, frame: &[u8], _now: Timestamp) -> Result<(), TransportError> {
        netproto::write_frame(&mut self.stream, frame)?;
        let mut b = [0u8; 1];
        self.reader.read_exact(&mut b)?;
        match Response::from_byte(b[0]) {
            Some(Response::Ack) => Ok(()),
            Some(Response::Reject(code)) => Err(TransportError::Rejected(code)),
            None => Err(io::Error::new(io::ErrorKind::InvalidData, "unknown response byte").into()),
        }
    }
}

/// Time-stamp client for a remote authority.
pub struct TcpTsaClient<A> {
    addr: A,
    timeout: Duration,
}

impl<A: ToSocketAddrs> TcpTsaClient<A> {
    pub fn new(addr: A) -> Self {
        Self {
            addr,
            timeout: Duration::from_secs(5),
        }
    }

    fn request(&self, digest: &[u8; 32]) -> io::Result<Vec<u8>> {
        let mut s = TcpStream::connect(&self.addr)?;
        s.set_read_timeout(Some(self.timeout))?;
        netproto::write_tsa_request(&mut s, digest)?;
        let mut status = [0u8; 1];
        s.read_exact(&mut status)?;
        if status[0] != 0 {
            return Err(io::Error::other(format!("authority refused with status {}", status[0])));
        }
        netproto::read_frame(&mut s)?.ok_or_else(|| io::ErrorKind::UnexpectedEof.into())
    }
}

impl<A: ToSocketAddrs> TsaClient for TcpTsaClient<A> {
    fn stamp(&mut self, covered: &[u8]) -> Result<TsaToken, TsaError> {
        let raw = self
            .request(&covered_digest(covered))
            .map_err(|e| TsaError::Unavailable(e.to_string()))?;
        TsaToken::decode(&raw)
    }
}

/// Answers one time-stamp request on `stream`.
pub fn serve_tsa_request<S: Read + Write>(
    stream: &mut S,
    tsa: &crate::envelope::SignerIdentity,
    now: Timestamp,
) -> io::Result<()> {
    let digest = netproto::read_tsa_request(stream)?;
    let token = crate::envelope::tsa::tsa_issue_digest(tsa, &digest, now);
    stream.write_all(&[0])?;
    netproto::write_frame(stream, &token.encode())
}
