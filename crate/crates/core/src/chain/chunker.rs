//! Time-based grouping of packets into interleaved intervals.
//!
//! Both directions share one interval window. The window opens with the
//! first packet of either direction; once it has been open for the interval
//! duration both directions are flushed, A->B first, so consecutive
//! intervals always alternate. A direction that stayed silent produces an
//! empty interval, which keeps the alternation rule satisfiable.

use std::time::Duration;

use thiserror::Error;

use super::body::Direction;
use crate::time::Timestamp;

pub const DEFAULT_INTERVAL: Duration = Duration::from_millis(1000);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("sequence {abs_seq} not above {last} already pushed for {direction}")]
pub struct OutOfOrder {
    pub direction: Direction,
    pub abs_seq: u64,
    pub last: u64,
}

/// Packets of one direction ready to be sealed into a voice interval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Flush {
    pub direction: Direction,
    pub time: Timestamp,
    pub abs_seqs: Vec<u64>,
    pub packets: Vec<Vec<u8>>,
}

/// Instrumentation of what the chunker holds in memory.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BufferStats {
    pub packets: usize,
    pub bytes: usize,
    pub high_water_packets: usize,
    pub high_water_bytes: usize,
    /// Largest observed sum over directions of the wallclock span held in the
    /// open buffers.
    pub high_water_span: Duration,
}

#[derive(Debug, Default, Clone)]
struct DirectionBuffer {
    abs_seqs: Vec<u64>,
    packets: Vec<Vec<u8>>,
    newest: Option<Timestamp>,
    last_pushed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct Chunker {
    interval: Duration,
    window_start: Option<Timestamp>,
    buffers: [DirectionBuffer; 2],
    fill_silent: bool,
    stats: BufferStats,
}

impl Chunker {
    pub fn new(interval: Duration) -> Self {
        Self {
            interval,
            window_start: None,
            buffers: Default::default(),
            fill_silent: true,
            stats: BufferStats::default(),
        }
    }

    /// Disables empty intervals for silent directions. Only useful to model a
    /// misbehaving recorder.
    pub fn without_silent_fill(mut self) -> Self {
        self.fill_silent = false;
        self
    }

    pub fn interval(&self) -> Duration {
        self.interval
    }

    pub fn stats(&self) -> BufferStats {
        self.stats
    }

    pub fn is_open(&self) -> bool {
        self.window_start.is_some()
    }

    /// Adds a packet, flushing first if the current window has expired.
    pub fn push(
        &mut self,
        direction: Direction,
        abs_seq: u64,
        packet: Vec<u8>,
        now: Timestamp,
    ) -> Result<Vec<Flush>, OutOfOrder> {
        let buf = &self.buffers[direction.index()];
        if let Some(last) = buf.last_pushed {
            if abs_seq <= last {
                return Err(OutOfOrder {
                    direction,
                    abs_seq,
                    last,
                });
            }
        }
        let out = self.poll(now);
        let start = *self.window_start.get_or_insert(now);
        let buf = &mut self.buffers[direction.index()];
        buf.last_pushed = Some(abs_seq);
        buf.newest = Some(now);
        self.stats.bytes += packet.len();
        self.stats.packets += 1;
        buf.abs_seqs.push(abs_seq);
        buf.packets.push(packet);
        self.record_high_water(start);
        Ok(out)
    }

    fn record_high_water(&mut self, start: Timestamp) {
        let s = &mut self.stats;
        s.high_water_packets = s.high_water_packets.max(s.packets);
        s.high_water_bytes = s.high_water_bytes.max(s.bytes);
        let span: u64 = self
            .buffers
            .iter()
            .filter_map(|b| b.newest)
            .map(|t| t.as_micros().saturating_sub(start.as_micros()))
            .sum();
        s.high_water_span = s.high_water_span.max(Duration::from_micros(span));
    }

    /// Flushes if the open window has lasted at least one interval.
    pub fn poll(&mut self, now: Timestamp) -> Vec<Flush> {
        match self.window_start {
            Some(start) if now.micros_since(start) >= self.interval.as_micros() as i64 => self.flush(),
            _ => Vec::new(),
        }
    }

    /// Flushes whatever is open, regardless of window age.
    pub fn flush(&mut self) -> Vec<Flush> {
        let Some(time) = self.window_start.take() else {
            return Vec::new();
        };
        let mut out = Vec::with_capacity(2);
        for direction in Direction::BOTH {
            let buf = &mut self.buffers[direction.index()];
            buf.newest = None;
            if buf.packets.is_empty() && !self.fill_silent {
                continue;
            }
            out.push(Flush {
                direction,
                time,
                abs_seqs: std::mem::take(&mut buf.abs_seqs),
                packets: std::mem::take(&mut buf.packets),
            });
        }
        self.stats.packets = 0;
        self.stats.bytes = 0;
        out
    }

    /// Drops the open window; returns the number of packets discarded.
    pub fn discard(&mut self) -> usize {
        self.window_start = None;
        let mut dropped = 0;
        for buf in &mut self.buffers {
            dropped += buf.packets.len();
            buf.abs_seqs.clear();
            buf.packets.clear();
            buf.newest = None;
        }
        self.stats.packets = 0;
        self.stats.bytes = 0;
        dropped
    }
}
