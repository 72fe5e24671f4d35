//! Single-step chain verification shared by the archive and the offline
//! verifier.

use thiserror::Error;

use super::body::{Direction, IntervalBody};
use crate::envelope::{envelope_hash, HashDigest};
use crate::time::Timestamp;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChainError {
    #[error("previous-interval hash does not match; the chain was broken")]
    ChainBroken,
    #[error("interval time {found} precedes {last}")]
    TimeRegression { last: Timestamp, found: Timestamp },
    #[error("third consecutive interval in direction {0}")]
    InterleaveViolation(Direction),
    #[error("expected interval index {expected}, found {found}")]
    IndexGap { expected: u32, found: u32 },
    #[error("interval after the final interval")]
    AlreadyFinished,
    #[error("initial interval inside an established chain")]
    UnexpectedInitial,
}

/// Verifier-side chain cursor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainState {
    pub prev_hash: HashDigest,
    pub last_time: Timestamp,
    pub same_direction_run: u8,
    pub last_direction: Option<Direction>,
    pub next_index: u32,
    pub finished: bool,
}

impl ChainState {
    pub const MAX_RUN: u8 = 2;

    /// Starts a chain from the encoded initial envelope.
    pub fn start(initial_encoded: &[u8], start_time: Timestamp) -> Self {
        Self {
            prev_hash: envelope_hash(initial_encoded),
            last_time: start_time,
            same_direction_run: 0,
            last_direction: None,
            next_index: 1,
            finished: false,
        }
    }

    /// Applies one signature-verified envelope. On error the state is left
    /// unchanged.
    pub fn step(&mut self, encoded: &[u8], body: &IntervalBody) -> Result<(), ChainError> {
        if self.finished {
            return Err(ChainError::AlreadyFinished);
        }
        let prev = body.prev_hash().ok_or(ChainError::UnexpectedInitial)?;
        if *prev != self.prev_hash {
            return Err(ChainError::ChainBroken);
        }
        if let IntervalBody::Voice(v) = body {
            if v.index != self.next_index {
                return Err(ChainError::IndexGap {
                    expected: self.next_index,
                    found: v.index,
                });
            }
        }
        let time = body.time();
        if time < self.last_time {
            return Err(ChainError::TimeRegression {
                last: self.last_time,
                found: time,
            });
        }
        let mut run = self.same_direction_run;
        if let IntervalBody::Voice(v) = body {
            run = if self.last_direction == Some(v.direction) {
                run + 1
            } else {
                1
            };
            if run > Self::MAX_RUN {
                return Err(ChainError::InterleaveViolation(v.direction));
            }
        }

        self.prev_hash = envelope_hash(encoded);
        self.last_time = time;
        match body {
            IntervalBody::Voice(v) => {
                self.same_direction_run = run;
                self.last_direction = Some(v.direction);
                self.next_index += 1;
            }
            IntervalBody::Final(_) => self.finished = true,
            IntervalBody::Initial(_) => unreachable!("rejected above"),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::body::{FinalBody, TerminationReason, VoiceBody};

    fn voice(prev: HashDigest, index: u32, time: u64, dir: Direction) -> (Vec<u8>, IntervalBody) {
        let body = IntervalBody::Voice(VoiceBody {
            prev_hash: prev,
            index,
            time: Timestamp(time),
            direction: dir,
            abs_seqs: vec![],
            packets: vec![],
        });
        // Stand-in for an encoded envelope: any bytes unique to the interval.
        let encoded = format!("env-{index}-{time}-{dir:?}").into_bytes();
        (encoded, body)
    }

    fn started() -> ChainState {
        ChainState::start(b"initial", Timestamp(0))
    }

    #[test]
    fn accepts_successor() {
        let mut s = started();
        let (enc, body) = voice(s.prev_hash, 1, 5, Direction::AtoB);
        s.step(&enc, &body).unwrap();
        assert_eq!(s.prev_hash, envelope_hash(&enc));
        assert_eq!(s.next_index, 2);
    }

    #[test]
    fn skipped_interval_breaks_chain() {
        let mut s = started();
        let (e1, b1) = voice(s.prev_hash, 1, 5, Direction::AtoB);
        let (e2, b2) = voice(envelope_hash(&e1), 2, 5, Direction::BtoA);
        let (_, b3) = voice(envelope_hash(&e2), 3, 6, Direction::AtoB);
        s.step(&e1, &b1).unwrap();
        let before = s.clone();
        assert_eq!(s.step(b"x", &b3), Err(ChainError::ChainBroken));
        assert_eq!(s, before);
        let _ = b2;
    }

    #[test]
    fn third_same_direction_rejected() {
        let mut s = started();
        for i in 1..=2 {
            let (e, b) = voice(s.prev_hash, i, 5, Direction::AtoB);
            s.step(&e, &b).unwrap();
        }
        let (e, b) = voice(s.prev_hash, 3, 5, Direction::AtoB);
        assert_eq!(s.step(&e, &b), Err(ChainError::InterleaveViolation(Direction::AtoB)));
        let (e, b) = voice(s.prev_hash, 3, 5, Direction::BtoA);
        s.step(&e, &b).unwrap();
    }

    #[test]
    fn time_and_index_rules() {
        let mut s = started();
        let (e, b) = voice(s.prev_hash, 1, 10, Direction::AtoB);
        s.step(&e, &b).unwrap();
        let (e, b) = voice(s.prev_hash, 2, 9, Direction::BtoA);
        assert!(matches!(s.step(&e, &b), Err(ChainError::TimeRegression { .. })));
        let (e, b) = voice(s.prev_hash, 3, 10, Direction::BtoA);
        assert_eq!(s.step(&e, &b), Err(ChainError::IndexGap { expected: 2, found: 3 }));
        // equal times are sequential
        let (e, b) = voice(s.prev_hash, 2, 10, Direction::BtoA);
        s.step(&e, &b).unwrap();
    }

    #[test]
    fn final_closes_chain() {
        let mut s = started();
        let fin = IntervalBody::Final(FinalBody {
            prev_hash: s.prev_hash,
            time: Timestamp(3),
            reason: TerminationReason::HangupA,
        });
        s.step(b"final", &fin).unwrap();
        assert!(s.finished);
        let (e, b) = voice(s.prev_hash, 1, 5, Direction::AtoB);
        assert_eq!(s.step(&e, &b), Err(ChainError::AlreadyFinished));
    }
}
