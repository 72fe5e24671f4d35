//! Synthetic call traffic and the capture-file format used for replay.

use std::io::{self, Read, Write};
use std::time::Duration;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chain::{Direction, PayloadMapping};
use crate::netproto::CallId;
use crate::rtp::RtpPacket;
use crate::vsec::CallSetup;

/// A forward jump of the media clock at one packet, modelling a sender
/// (or forger) whose timestamps disagree with real time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimestampJump {
    pub direction: Direction,
    pub at_packet: u64,
    pub ticks: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficProfile {
    pub duration: Duration,
    /// Per direction.
    pub packets_per_second: u32,
    /// Independent random loss per packet.
    pub loss: f64,
    /// Uniform extra delay per packet, up to this bound.
    pub jitter: Duration,
    pub active: [bool; 2],
    /// Packets (direction, index) never delivered.
    pub drops: Vec<(Direction, u64)>,
    pub ts_jump: Option<TimestampJump>,
    pub payload_type: u8,
    pub codec_name: String,
    pub clock_rate: u32,
    pub payload_len: usize,
}

impl Default for TrafficProfile {
    /// 8 kHz PCMU in 20 ms packets, both directions talking.
    fn default() -> Self {
        Self {
            duration: Duration::from_secs(10),
            packets_per_second: 50,
            loss: 0.0,
            jitter: Duration::ZERO,
            active: [true, true],
            drops: Vec::new(),
            ts_jump: None,
            payload_type: 0,
            codec_name: "PCMU".into(),
            clock_rate: 8000,
            payload_len: 160,
        }
    }
}

impl TrafficProfile {
    pub fn with_duration(mut self, d: Duration) -> Self {
        self.duration = d;
        self
    }

    pub fn packets_per_direction(&self) -> u64 {
        self.duration.as_micros() as u64 * self.packets_per_second as u64 / 1_000_000
    }

    fn spacing_micros(&self) -> u64 {
        1_000_000 / self.packets_per_second.max(1) as u64
    }

    fn ticks_per_packet(&self) -> u32 {
        self.clock_rate / self.packets_per_second.max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimedPacket {
    pub direction: Direction,
    /// Delivery time relative to the call start.
    pub offset_micros: u64,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct GeneratedCall {
    pub setup: CallSetup,
    pub duration: Duration,
    /// Delivery order.
    pub packets: Vec<TimedPacket>,
    /// Indices of delivered packets per direction, ascending.
    pub delivered: [Vec<u64>; 2],
    pub first_sequence: [u16; 2],
}

pub fn random_call_id<R: RngCore>(rng: &mut R) -> CallId {
    let mut id = [0u8; 16];
    rng.fill_bytes(&mut id);
    id
}

/// Builds a deterministic call for `seed`. Sequence numbers and timestamps
/// start at random values.
pub fn generate_call(profile: &TrafficProfile, seed: u64) -> GeneratedCall {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let call_id = random_call_id(&mut rng);
    let spacing = profile.spacing_micros();
    let jitter = profile.jitter.as_micros() as u64;
    let mut packets = Vec::new();
    let mut delivered: [Vec<u64>; 2] = Default::default();
    let mut first_sequence = [0u16; 2];

    for d in Direction::BOTH {
        let seq0: u16 = rng.gen();
        let ts0: u32 = rng.gen();
        let ssrc: u32 = rng.gen();
        first_sequence[d.index()] = seq0;
        if !profile.active[d.index()] {
            continue;
        }
        let mut ts_extra = 0u32;
        for i in 0..profile.packets_per_direction() {
            if let Some(j) = profile.ts_jump.filter(|j| j.direction == d && j.at_packet == i) {
                ts_extra = ts_extra.wrapping_add(j.ticks);
            }
            let mut payload = vec![0u8; profile.payload_len];
            rng.fill_bytes(&mut payload);
            let lost = profile.loss > 0.0 && rng.gen_bool(profile.loss.min(1.0));
            let delay = if jitter > 0 { rng.gen_range(0..=jitter) } else { 0 };
            if lost || profile.drops.contains(&(d, i)) {
                continue;
            }
            let ts = ts0
                .wrapping_add((i as u32).wrapping_mul(profile.ticks_per_packet()))
                .wrapping_add(ts_extra);
            let bytes = RtpPacket::build(
                profile.payload_type,
                i == 0,
                seq0.wrapping_add(i as u16),
                ts,
                ssrc,
                vec![],
                payload,
            )
            .into_bytes();
            packets.push(TimedPacket {
                direction: d,
                offset_micros: i * spacing + delay,
                bytes,
            });
            delivered[d.index()].push(i);
        }
    }
    packets.sort_by_key(|p| (p.offset_micros, p.direction.index()));

    GeneratedCall {
        setup: CallSetup {
            call_id,
            from_uri: "sip:alice@example.org".into(),
            to_uri: "sip:bob@example.org".into(),
            payload_map: vec![PayloadMapping {
                payload_type: profile.payload_type,
                codec_name: profile.codec_name.clone(),
                clock_rate: profile.clock_rate,
                channels: 1,
            }],
        },
        duration: profile.duration,
        packets,
        delivered,
        first_sequence,
    }
}

/// Writes `direction u8 | offset_micros u64 | len u16 | rtp` records.
pub fn write_capture<W: Write>(w: &mut W, packets: &[TimedPacket]) -> io::Result<()> {
    for p in packets {
        let len = u16::try_from(p.bytes.len()).map_err(|_| io::Error::other("packet too large for capture"))?;
        w.write_all(&[p.direction as u8])?;
        w.write_all(&p.offset_micros.to_be_bytes())?;
        w.write_all(&len.to_be_bytes())?;
        w.write_all(&p.bytes)?;
    }
    w.flush()
}

pub fn read_capture<R: Read>(r: &mut R) -> io::Result<Vec<TimedPacket>> {
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_owned());
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < raw.len() {
        let head = raw.get(pos..pos + 11).ok_or_else(|| bad("truncated capture record"))?;
        let direction = Direction::from_u8(head[0]).ok_or_else(|| bad("bad direction in capture"))?;
        let offset_micros = u64::from_be_bytes(head[1..9].try_into().expect("8 bytes"));
        let len = u16::from_be_bytes([head[9], head[10]]) as usize;
        let bytes = raw
            .get(pos + 11..pos + 11 + len)
            .ok_or_else(|| bad("truncated capture packet"))?
            .to_vec();
        out.push(TimedPacket {
            direction,
            offset_micros,
            bytes,
        });
        pos += 11 + len;
    }
    Ok(out)
}
