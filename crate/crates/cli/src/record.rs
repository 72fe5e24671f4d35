//! Live recording: capture replay paced in real time, or two UDP ports.

use std::net::UdpSocket;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use log::{info, warn};
use sva::chain::{Direction, TerminationReason};
use sva::harness::pipeline::TICK;
use sva::harness::TimedPacket;
use sva::time::Timestamp;
use sva::vsec::{CallSetup, RecorderConfig, RecorderSession, SessionState, TcpArcTransport, TcpTsaClient};

pub enum Source {
    Replay(Vec<TimedPacket>),
    Udp { port_a: u16, port_b: u16, idle: Duration },
}

pub struct RecordArgs {
    pub setup: CallSetup,
    pub identity: sva::envelope::SignerIdentity,
    pub arc_addr: String,
    pub tsa_addr: String,
    pub config: RecorderConfig,
}

type Session = RecorderSession<TcpArcTransport>;

fn report(session: &Session) {
    let c = session.counters();
    info!(
        "sent {} envelopes ({} bytes), {} signatures, {} packets, {} replays, {} late, {} unparsable",
        c.envelopes_sent, c.bytes_sent, c.signatures, c.packets_accepted, c.replays_dropped, c.late_dropped, c.parse_failures
    );
}

pub fn run(args: RecordArgs, source: Source) -> Result<SessionState> {
    let transport = TcpArcTransport::connect(args.arc_addr.as_str(), &args.setup.call_id)
        .with_context(|| format!("connecting to archive at {}", args.arc_addr))?;
    let mut tsa = TcpTsaClient::new(args.tsa_addr.as_str());
    let mut session = RecorderSession::start(
        args.setup,
        Arc::new(args.identity),
        &mut tsa,
        transport,
        args.config,
        Timestamp::now(),
        &mut rand::thread_rng(),
    )?;
    info!("recording call {}", hex::encode(session.call_id()));
    match source {
        Source::Replay(packets) => replay(&mut session, &packets)?,
        Source::Udp { port_a, port_b, idle } => listen(&mut session, port_a, port_b, idle)?,
    }
    report(&session);
    Ok(session.state())
}

fn replay(session: &mut Session, packets: &[TimedPacket]) -> Result<()> {
    let t0 = Instant::now();
    let at = |offset: u64| t0 + Duration::from_micros(offset);
    let mut next_tick = TICK.as_micros() as u64;
    for p in packets {
        while next_tick < p.offset_micros {
            sleep_until(at(next_tick));
            session.tick(Timestamp::now())?;
            next_tick += TICK.as_micros() as u64;
        }
        sleep_until(at(p.offset_micros));
        session.ingest(p.direction, &p.bytes, Timestamp::now())?;
        if session.state() != SessionState::Streaming {
            return Ok(());
        }
    }
    let end = packets.last().map_or(0, |p| p.offset_micros) + TICK.as_micros() as u64;
    sleep_until(at(end));
    session.close(TerminationReason::HangupA, Timestamp::now())?;
    Ok(())
}

fn sleep_until(t: Instant) {
    let now = Instant::now();
    if t > now {
        thread::sleep(t - now);
    }
}

fn listen(session: &mut Session, port_a: u16, port_b: u16, idle: Duration) -> Result<()> {
    let bind = |port: u16| -> Result<UdpSocket> {
        let s = UdpSocket::bind(("0.0.0.0", port)).with_context(|| format!("binding UDP port {port}"))?;
        s.set_nonblocking(true)?;
        Ok(s)
    };
    let sockets = [(Direction::AtoB, bind(port_a)?), (Direction::BtoA, bind(port_b)?)];
    info!("listening for RTP on ports {port_a} (A->B) and {port_b} (B->A)");
    let mut buf = vec![0u8; 65_536];
    let mut last_packet = Instant::now();
    loop {
        let mut got = false;
        for (dir, sock) in &sockets {
            loop {
                match sock.recv(&mut buf) {
                    Ok(n) => {
                        got = true;
                        session.ingest(*dir, &buf[..n], Timestamp::now())?;
                        if session.state() != SessionState::Streaming {
                            return Ok(());
                        }
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => break,
                    Err(e) => {
                        warn!("receive failed: {e}");
                        session.close(TerminationReason::ProtocolOrNetworkError, Timestamp::now())?;
                        return Ok(());
                    }
                }
            }
        }
        if got {
            last_packet = Instant::now();
        } else if last_packet.elapsed() >= idle {
            info!("no RTP for {idle:?}, closing");
            session.close(TerminationReason::HangupA, Timestamp::now())?;
            return Ok(());
        } else {
            thread::sleep(Duration::from_millis(2));
        }
        session.tick(Timestamp::now())?;
    }
}
