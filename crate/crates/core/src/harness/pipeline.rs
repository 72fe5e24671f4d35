//! Recorder and archive wired together in one process, optionally over
//! loopback TCP.

use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use crate::arc::{self, ArcConfig, ArcContext, ArcSession, ArcSessionStatus, ArchiveStore, CheckReport};
use crate::chain::{BufferStats, CallMeta, TerminationReason};
use crate::envelope::tsa::LocalTsa;
use crate::envelope::pki::TestPki;
use crate::envelope::SignerIdentity;
use crate::netproto::{CallId, Response};
use crate::time::{Clock, ManualClock, Timestamp};
use crate::vsec::{
    ArcTransport, MemoryTransport, RecorderConfig, RecorderSession, SessionCounters, SessionError, SessionState,
    TcpArcTransport,
};

use super::traffic::GeneratedCall;

/// Granularity of recorder ticks between packets.
pub const TICK: Duration = Duration::from_millis(20);

#[derive(Debug, Clone)]
pub struct Recording {
    pub call_id: CallId,
    pub meta: CallMeta,
    /// Frames in send order with their send time.
    pub frames: Vec<(Timestamp, Vec<u8>)>,
    pub state: SessionState,
    pub counters: SessionCounters,
    pub buffer: BufferStats,
    pub error: Option<String>,
}

/// Feeds a generated call through a recorder session starting at `start`.
/// The call ends with a hangup at `start + duration` unless the recorder
/// terminates it earlier.
pub fn drive_call<T: ArcTransport>(
    session: &mut RecorderSession<T>,
    call: &GeneratedCall,
    start: Timestamp,
    clock: Option<&ManualClock>,
) -> Result<(), SessionError> {
    let set = |t: Timestamp| {
        if let Some(c) = clock {
            c.set(t)
        }
    };
    let mut next_tick = start.saturating_add(TICK);
    let end = start.saturating_add(call.duration);
    for p in &call.packets {
        let t = Timestamp(start.as_micros() + p.offset_micros);
        while next_tick <= t {
            set(next_tick);
            session.tick(next_tick)?;
            next_tick = next_tick.saturating_add(TICK);
        }
        set(t);
        session.ingest(p.direction, &p.bytes, t)?;
        if session.state() != SessionState::Streaming {
            return Ok(());
        }
    }
    while next_tick < end {
        set(next_tick);
        session.tick(next_tick)?;
        next_tick = next_tick.saturating_add(TICK);
    }
    set(end);
    session.close(TerminationReason::HangupA, end)?;
    Ok(())
}

/// Records a call into memory.
pub fn record_call<R: rand::RngCore>(
    call: &GeneratedCall,
    identity: &SignerIdentity,
    tsa_identity: &SignerIdentity,
    config: RecorderConfig,
    start: Timestamp,
    rng: &mut R,
) -> Result<Recording, SessionError> {
    let clock = ManualClock::new(start);
    let mut tsa = LocalTsa::new(Arc::new(tsa_identity.clone()), Arc::new(clock.clone()));
    let mut session = RecorderSession::start(
        call.setup.clone(),
        Arc::new(identity.clone()),
        &mut tsa,
        MemoryTransport::default(),
        config,
        start,
        rng,
    )?;
    let error = drive_call(&mut session, call, start, Some(&clock)).err().map(|e| e.to_string());
    Ok(Recording {
        call_id: *session.call_id(),
        meta: session.meta().clone(),
        state: session.state(),
        counters: session.counters(),
        buffer: session.buffer_stats(),
        error,
        frames: session.into_transport().frames,
    })
}

#[derive(Debug, Clone)]
pub struct ArchiveRun {
    pub status: ArcSessionStatus,
    pub reports: Vec<CheckReport>,
    pub path: PathBuf,
}

/// Submits frames to an archive session. The archive clock reads each
/// frame's send time shifted by `skew_micros`.
pub fn archive_frames(
    store: Arc<ArchiveStore>,
    pki: &TestPki,
    config: ArcConfig,
    call_id: CallId,
    frames: &[(Timestamp, Vec<u8>)],
    skew_micros: i64,
) -> ArchiveRun {
    let clock = ManualClock::new(Timestamp(0));
    let ctx = Arc::new(ArcContext {
        store,
        trust_root: pki.root.clone(),
        tsa_cert: pki.tsa_initial.leaf().clone(),
        config,
        clock: Arc::new(clock.clone()),
    });
    let mut session = ArcSession::new(ctx, call_id);
    for (t, frame) in frames {
        clock.set(Timestamp(t.as_micros().saturating_add_signed(skew_micros)));
        if let Response::Reject(_) = session.handle_frame(frame) {
            break;
        }
    }
    let path = session.file_path();
    let reports = session.reports().to_vec();
    let status = session.finish();
    ArchiveRun { status, reports, path }
}

/// Concatenates frames into the stored file layout.
pub fn frames_to_file<'a>(frames: impl IntoIterator<Item = &'a [u8]>) -> Vec<u8> {
    let mut out = Vec::new();
    for f in frames {
        out.extend_from_slice(&(f.len() as u32).to_be_bytes());
        out.extend_from_slice(f);
    }
    out
}

/// Runs the recorder against an archive server on a loopback socket. Both
/// sides share one manual clock that the driver advances.
pub fn record_over_tcp<R: rand::RngCore>(
    call: &GeneratedCall,
    pki: &TestPki,
    store: Arc<ArchiveStore>,
    recorder: RecorderConfig,
    archive: ArcConfig,
    start: Timestamp,
    rng: &mut R,
) -> std::io::Result<(Result<(), SessionError>, ArcSessionStatus)> {
    let clock = ManualClock::new(start);
    let ctx = Arc::new(ArcContext {
        store,
        trust_root: pki.root.clone(),
        tsa_cert: pki.tsa_initial.leaf().clone(),
        config: archive,
        clock: Arc::new(clock.clone()) as Arc<dyn Clock>,
    });
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let server = thread::spawn(move || {
        let (stream, _) = listener.accept()?;
        arc::handle_connection(ctx, stream)
    });
    let transport = TcpArcTransport::connect(addr, &call.setup.call_id)?;
    let mut tsa = LocalTsa::new(Arc::new(pki.tsa_initial.clone()), Arc::new(clock.clone()));
    let result = RecorderSession::start(
        call.setup.clone(),
        Arc::new(pki.recorder.clone()),
        &mut tsa,
        transport,
        recorder,
        start,
        rng,
    )
    .and_then(|mut s| {
        let r = drive_call(&mut s, call, start, Some(&clock));
        drop(s);
        r
    });
    let status = server.join().map_err(|_| std::io::Error::other("archive thread panicked"))??;
    Ok((result, status))
}
