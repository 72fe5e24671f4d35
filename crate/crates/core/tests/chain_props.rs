mod common;

use std::collections::BTreeMap;
use std::time::Duration;

use common::{body, profile, Fixture};
use proptest::prelude::*;
use sva::chain::{ChainState, Chunker, Direction, Flush, IntervalBody, VoiceBody};
use sva::envelope::{envelope_hash, Envelope};
use sva::harness::SCENARIO_EPOCH;
use sva::time::Timestamp;

/// Runs frames through the chain rules alone. Returns the first position
/// that fails, or `None` if all are accepted.
fn chain_failure(frames: &[Vec<u8>]) -> Option<usize> {
    let mut state: Option<ChainState> = None;
    for (i, f) in frames.iter().enumerate() {
        let Some(b) = Envelope::decode(f)
            .ok()
            .and_then(|e| IntervalBody::decode(e.kind, &e.body).ok())
        else {
            return Some(i);
        };
        match (&mut state, &b) {
            (None, IntervalBody::Initial(m)) => state = Some(ChainState::start(f, m.start_time)),
            (None, _) => return Some(i),
            (Some(s), _) => {
                if s.step(f, &b).is_err() {
                    return Some(i);
                }
            }
        }
    }
    None
}

#[test]
fn chain_mutations_rejected_at_or_before_affected_position() {
    let mut fx = Fixture::new(31);
    let rec = fx.record(&profile(9), SCENARIO_EPOCH);
    let frames: Vec<Vec<u8>> = rec.frames.iter().map(|(_, f)| f.clone()).collect();
    let n = frames.len();
    assert!(n <= 20);
    assert_eq!(chain_failure(&frames), None);

    for i in 1..n - 1 {
        let mut f = frames.clone();
        f.remove(i);
        assert!(chain_failure(&f).is_some_and(|p| p <= i), "drop {i}");
    }
    for i in 0..n {
        for j in i + 1..n {
            let mut f = frames.clone();
            f.swap(i, j);
            assert!(chain_failure(&f).is_some_and(|p| p <= i), "swap {i},{j}");
        }
    }
    for i in 0..n {
        let mut f = frames.clone();
        f.insert(i + 1, frames[i].clone());
        assert!(chain_failure(&f).is_some_and(|p| p <= i + 1), "duplicate {i}");
    }
    // Without re-hashing, a changed byte breaks the link from the next
    // interval. The last interval has no successor; its signature covers it.
    for i in 0..n - 1 {
        for pos in (0..frames[i].len()).step_by(7) {
            let mut f = frames.clone();
            f[i][pos] ^= 0x40;
            assert!(chain_failure(&f).is_some_and(|p| p <= i + 1), "flip {i}:{pos}");
        }
    }
}

#[derive(Debug, Clone)]
enum Event {
    Packet { dir: Direction, skip: u8, len: u8, after_ms: u16 },
    Poll { after_ms: u16 },
}

fn event() -> impl Strategy<Value = Event> {
    prop_oneof![
        6 => (any::<bool>(), 0u8..3, 12u8..200, 0u16..60).prop_map(|(a, skip, len, after_ms)| Event::Packet {
            dir: if a { Direction::AtoB } else { Direction::BtoA },
            skip,
            len,
            after_ms,
        }),
        1 => (0u16..3000).prop_map(|after_ms| Event::Poll { after_ms }),
    ]
}

type Item = (Direction, u64, Vec<u8>);

fn items(flushes: &[Flush]) -> Vec<Item> {
    flushes
        .iter()
        .flat_map(|f| f.abs_seqs.iter().zip(&f.packets).map(move |(s, p)| (f.direction, *s, p.clone())))
        .collect()
}

fn multiset(v: &[Item]) -> BTreeMap<Item, usize> {
    let mut m = BTreeMap::new();
    for i in v {
        *m.entry(i.clone()).or_default() += 1;
    }
    m
}

fn drive(events: &[Event]) -> (Vec<Item>, Vec<Flush>, Chunker, Timestamp) {
    let mut c = Chunker::new(Duration::from_secs(1));
    let mut now = SCENARIO_EPOCH;
    let mut next = [0u64; 2];
    let mut pushed = Vec::new();
    let mut flushed = Vec::new();
    for (k, e) in events.iter().enumerate() {
        match *e {
            Event::Packet { dir, skip, len, after_ms } => {
                now = now.saturating_add(Duration::from_millis(after_ms as u64));
                let seq = next[dir.index()] + skip as u64;
                next[dir.index()] = seq + 1;
                let pkt = vec![k as u8; len as usize];
                pushed.push((dir, seq, pkt.clone()));
                flushed.extend(c.push(dir, seq, pkt, now).unwrap());
            }
            Event::Poll { after_ms } => {
                now = now.saturating_add(Duration::from_millis(after_ms as u64));
                flushed.extend(c.poll(now));
            }
        }
    }
    (pushed, flushed, c, now)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn chunker_conserves_packets(events in prop::collection::vec(event(), 0..300), discard: bool) {
        let (pushed, mut flushed, mut c, _) = drive(&events);
        let open = c.stats().packets;
        prop_assert_eq!(items(&flushed).len() + open, pushed.len());
        if discard {
            prop_assert_eq!(c.discard(), open);
            let mut rest = multiset(&items(&flushed));
            for (k, v) in multiset(&pushed) {
                let f = rest.remove(&k).unwrap_or(0);
                prop_assert!(f <= v);
            }
            prop_assert!(rest.is_empty());
        } else {
            flushed.extend(c.flush());
            prop_assert_eq!(multiset(&items(&flushed)), multiset(&pushed));
        }
        prop_assert_eq!(c.stats().packets, 0);
    }

    #[test]
    fn chunker_output_satisfies_chain_rules(events in prop::collection::vec(event(), 0..300)) {
        let (_, mut flushed, mut c, _) = drive(&events);
        flushed.extend(c.flush());
        let initial = b"initial stand-in".to_vec();
        let mut state = ChainState::start(&initial, SCENARIO_EPOCH);
        let mut prev = envelope_hash(&initial);
        for (i, f) in flushed.into_iter().enumerate() {
            let b = IntervalBody::Voice(VoiceBody {
                prev_hash: prev,
                index: i as u32 + 1,
                time: f.time,
                direction: f.direction,
                abs_seqs: f.abs_seqs,
                packets: f.packets,
            });
            let encoded = b.encode().unwrap();
            prop_assert!(state.step(&encoded, &b).is_ok(), "interval {}", i);
            prev = envelope_hash(&encoded);
        }
    }
}

#[test]
fn recorded_calls_alternate_directions() {
    let mut fx = Fixture::new(32);
    let rec = fx.record(&profile(4), SCENARIO_EPOCH);
    let dirs: Vec<Direction> = rec
        .frames
        .iter()
        .filter_map(|(_, f)| match body(f) {
            IntervalBody::Voice(v) => Some(v.direction),
            _ => None,
        })
        .collect();
    assert_eq!(dirs.len(), 8);
    assert!(dirs.chunks(2).all(|p| p == [Direction::AtoB, Direction::BtoA]));
}
