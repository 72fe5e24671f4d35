//! The archive: validates incoming envelope streams frame by frame and
//! persists what passes.

pub mod anchor;
pub mod checker;
pub mod report;
pub mod store;

use std::io::{self, BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::Arc;
use std::thread;

use log::{debug, info, warn};

use crate::chain::IntervalBody;
use crate::envelope::{Certificate, EnvelopeKind};
use crate::netproto::{self, CallId, CheckCode, Response};
use crate::time::{Clock, Timestamp};
pub use anchor::{merkle_root, period_anchor, verify_anchor, AnchorError, AnchorRecord};
pub use checker::{Accepted, ArcConfig, CheckContext, FrameChecker};
pub use report::{CheckReport, CheckStatus};
pub use store::{split_records, ArchiveStore, CallWriter, StoreError};

/// Everything a session needs that is shared across connections.
pub struct ArcContext {
    pub store: Arc<ArchiveStore>,
    pub trust_root: Certificate,
    pub tsa_cert: Certificate,
    pub config: ArcConfig,
    pub clock: Arc<dyn Clock>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArcSessionStatus {
    Open,
    Completed,
    Rejected { frame: usize, code: CheckCode },
    /// The stream ended without a final interval.
    Incomplete,
}

pub struct ArcSession {
    ctx: Arc<ArcContext>,
    call_id: CallId,
    checker: FrameChecker,
    writer: Option<CallWriter>,
    status: ArcSessionStatus,
    reports: Vec<CheckReport>,
}

impl ArcSession {
    pub fn new(ctx: Arc<ArcContext>, call_id: CallId) -> Self {
        let checker = FrameChecker::new(ctx.trust_root.clone(), ctx.tsa_cert.clone(), ctx.config.clone());
        Self {
            ctx,
            call_id,
            checker,
            writer: None,
            status: ArcSessionStatus::Open,
            reports: Vec::new(),
        }
    }

    pub fn status(&self) -> ArcSessionStatus {
        self.status
    }

    pub fn reports(&self) -> &[CheckReport] {
        &self.reports
    }

    pub fn file_path(&self) -> PathBuf {
        self.ctx.store.call_path(&self.call_id)
    }

    /// Validates one frame and persists it if every check passes.
    pub fn handle_frame(&mut self, encoded: &[u8]) -> Response {
        if let ArcSessionStatus::Rejected { code, .. } = self.status {
            return Response::Reject(code);
        }
        let arrival = self.ctx.clock.now();
        let store = Arc::clone(&self.ctx.store);
        let seen = move |n: &[u8; 16]| store.nonce_seen(n);
        let cctx = CheckContext {
            arrival: Some(arrival),
            nonce_seen: Some(&seen),
        };
        let (mut report, accepted) = self.checker.check(encoded, &cctx);
        if let Some(acc) = accepted {
            if let Err((code, detail)) = self.persist(encoded, &acc, arrival) {
                report.fail(code, detail);
            }
        }
        let response = match report.failure() {
            None => Response::Ack,
            Some((code, detail)) => {
                warn!(
                    "call {}: frame {} rejected with {code}: {detail}",
                    hex::encode(self.call_id),
                    report.frame_number()
                );
                self.status = ArcSessionStatus::Rejected {
                    frame: report.frame_number(),
                    code,
                };
                if let Some(w) = self.writer.take() {
                    if let Err(e) = w.reject(arrival) {
                        warn!("could not mark rejected file: {e}");
                    }
                }
                Response::Reject(code)
            }
        };
        self.reports.push(report);
        response
    }

    fn persist(&mut self, encoded: &[u8], acc: &Accepted, arrival: Timestamp) -> Result<(), (CheckCode, String)> {
        let storage = |e: StoreError| (CheckCode::Storage, e.to_string());
        if let IntervalBody::Initial(meta) = &acc.body {
            let writer = self.ctx.store.create_call(&self.call_id, &meta.nonce).map_err(|e| match e {
                StoreError::NonceReused => (CheckCode::Nonce, e.to_string()),
                e => storage(e),
            })?;
            self.writer = Some(writer);
        }
        let is_final = acc.envelope.kind == EnvelopeKind::Final;
        let w = self.writer.as_mut().ok_or((CheckCode::Storage, "no open call file".to_owned()))?;
        w.append(encoded, is_final).map_err(storage)?;
        if is_final {
            let w = self.writer.take().expect("just used");
            w.close(arrival).map_err(|e| storage(e.into()))?;
            self.status = ArcSessionStatus::Completed;
        }
        Ok(())
    }

    /// Ends the session when the stream closes.
    pub fn finish(mut self) -> ArcSessionStatus {
        if let Some(w) = self.writer.take() {
            if let Err(e) = w.close(self.ctx.clock.now()) {
                warn!("could not record close: {e}");
            }
            self.status = ArcSessionStatus::Incomplete;
        } else if self.status == ArcSessionStatus::Open {
            self.status = ArcSessionStatus::Incomplete;
        }
        self.status
    }
}

/// Serves one recorder connection to completion.
pub fn handle_connection(ctx: Arc<ArcContext>, stream: TcpStream) -> io::Result<ArcSessionStatus> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let call_id = netproto::read_handshake(&mut reader)?;
    info!("call {} connected", hex::encode(call_id));
    let mut session = ArcSession::new(ctx, call_id);
    let mut frame_error = None;
    loop {
        let frame = match netproto::read_frame(&mut reader) {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(e) => {
                frame_error = Some(e);
                break;
            }
        };
        let response = session.handle_frame(&frame);
        writer.write_all(&[response.to_byte()])?;
        writer.flush()?;
        if let Response::Reject(_) = response {
            break;
        }
        if session.status() == ArcSessionStatus::Completed {
            // Anything further is answered with a rejection by the checker.
            debug!("call {} completed", hex::encode(call_id));
        }
    }
    if let Some(e) = frame_error {
        if e.kind() == io::ErrorKind::InvalidData {
            // Oversized or unreadable frame: refuse it as malformed.
            let _ = writer.write_all(&[Response::Reject(CheckCode::Malformed).to_byte()]);
            let _ = writer.flush();
        }
        warn!("call {}: stream error: {e}", hex::encode(call_id));
    }
    let status = session.finish();
    info!("call {} ended: {status:?}", hex::encode(call_id));
    Ok(status)
}

/// Accepts connections forever, one thread per connection.
pub fn serve(listener: TcpListener, ctx: Arc<ArcContext>) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                warn!("accept failed: {e}");
                continue;
            }
        };
        let ctx = Arc::clone(&ctx);
        thread::spawn(move || {
            if let Err(e) = handle_connection(ctx, stream) {
                warn!("connection failed: {e}");
            }
        });
    }
    Ok(())
}
