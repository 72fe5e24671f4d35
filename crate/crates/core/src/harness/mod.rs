//! Attack scenarios against the recorder/archive pipeline.
//!
//! A scenario records a synthetic call, manipulates the frame stream the way
//! an attacker between recorder and archive (or holding the recorder key)
//! could, submits the result to a fresh archive and compares what happened
//! with the outcome fixed in the scenario table. The manipulated stream is
//! also verified offline so both verdicts can be compared.

pub mod pipeline;
pub mod traffic;

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::arc::{ArcConfig, ArcSessionStatus, ArchiveStore};
use crate::chain::{Direction, IntervalBody, TerminationReason};
use crate::envelope::pki::TestPki;
use crate::envelope::{envelope_hash, sign_envelope, Envelope, EnvelopeKind, HashDigest, SignerIdentity};
use crate::netproto::CheckCode;
use crate::time::Timestamp;
use crate::verify::{verify_archive, VerificationStatus};
use crate::vsec::{QosPolicy, RecorderConfig};
pub use pipeline::{archive_frames, frames_to_file, record_call, ArchiveRun, Recording};
pub use traffic::{generate_call, GeneratedCall, TimedPacket, TimestampJump, TrafficProfile};

/// Arbitrary but fixed call start used by all scenarios.
pub const SCENARIO_EPOCH: Timestamp = Timestamp(1_700_000_000_000_000);

#[derive(Debug, Clone, PartialEq)]
pub enum Attack {
    None,
    /// Flips one bit of the frame at this chain position.
    BitFlip { frame: usize, bit: usize },
    DropInterval(usize),
    Reorder(usize, usize),
    /// Suppresses the final interval.
    Truncate,
    DuplicateFrame(usize),
    /// After interval n, an attacker with another certified key continues
    /// the chain.
    MitmContinue(usize),
    /// The initial interval of an archived call followed by another call.
    ReplayInitialNewTail,
    /// The recorder key is stolen; a forged initial reuses an old token.
    CompromisedKeyReplay,
    /// An old, never archived, time-stamped initial in front of a new call.
    BackdateCombined,
    /// Random packet loss at this rate on the wire before the recorder.
    ExcessLoss(f64),
    /// Offset of the archive clock.
    ClockSkew(i64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecorderMode {
    Honest,
    /// Skips loss, timing and silence handling, as a manipulated recorder
    /// would.
    Tampered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Complete(TerminationReason),
    Incomplete,
    /// One-based frame number as seen by the archive.
    Reject { frame: usize, code: CheckCode },
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Complete(r) => write!(f, "complete ({r})"),
            Outcome::Incomplete => f.write_str("incomplete"),
            Outcome::Reject { frame, code } => write!(f, "reject {code} at frame {frame}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: &'static str,
    pub profile: TrafficProfile,
    pub attack: Attack,
    pub recorder: RecorderMode,
    pub storage_capacity: Option<u64>,
    pub expected: Outcome,
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("recorder failed: {0}")]
    Recorder(#[from] crate::vsec::SessionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub name: &'static str,
    pub seed: u64,
    pub expected: Outcome,
    pub actual: Outcome,
    /// Offline verdict on the full manipulated stream.
    pub offline: VerificationStatus,
    /// Whether offline and live verdicts agree. Checks that need the
    /// archive clock, nonce index or storage cannot agree and are `None`.
    pub offline_agrees: Option<bool>,
    pub frames_submitted: usize,
    /// SHA-256 of the archive file.
    pub archive_digest: String,
    pub passed: bool,
}

fn short(secs: u64) -> TrafficProfile {
    TrafficProfile::default().with_duration(Duration::from_secs(secs))
}

fn reject(frame: usize, code: CheckCode) -> Outcome {
    Outcome::Reject { frame, code }
}

/// The fixed scenario table. Together the entries produce every reject code.
pub fn scenarios() -> Vec<Scenario> {
    let s = |name, profile, attack, expected| Scenario {
        name,
        profile,
        attack,
        recorder: RecorderMode::Honest,
        storage_capacity: None,
        expected,
    };
    let tampered = |name, profile, expected| Scenario {
        name,
        profile,
        attack: Attack::None,
        recorder: RecorderMode::Tampered,
        storage_capacity: None,
        expected,
    };
    vec![
        s("clean", short(10), Attack::None, Outcome::Complete(TerminationReason::HangupA)),
        s("drop-interval", short(10), Attack::DropInterval(3), reject(4, CheckCode::Chain)),
        s("reorder", short(10), Attack::Reorder(5, 6), reject(6, CheckCode::Chain)),
        s("duplicate", short(10), Attack::DuplicateFrame(4), reject(6, CheckCode::Chain)),
        // 3 s: initial, six voice intervals, final at chain position 7.
        s("duplicate-final", short(3), Attack::DuplicateFrame(7), reject(9, CheckCode::Chk3)),
        s("truncate", short(5), Attack::Truncate, Outcome::Incomplete),
        s(
            "bit-flip-magic",
            short(5),
            Attack::BitFlip { frame: 2, bit: 0 },
            reject(3, CheckCode::Malformed),
        ),
        s(
            "bit-flip-body",
            short(5),
            Attack::BitFlip { frame: 2, bit: 8 * 200 + 3 },
            reject(3, CheckCode::Chk2),
        ),
        s("mitm-continue", short(10), Attack::MitmContinue(4), reject(6, CheckCode::Chk2)),
        s("replay-initial", short(5), Attack::ReplayInitialNewTail, reject(1, CheckCode::Nonce)),
        s("compromised-key", short(5), Attack::CompromisedKeyReplay, reject(1, CheckCode::Chk1)),
        s("backdate", short(5), Attack::BackdateCombined, reject(2, CheckCode::Chain)),
        s(
            "excess-loss",
            short(10),
            Attack::ExcessLoss(0.02),
            Outcome::Complete(TerminationReason::QosViolation),
        ),
        s("clock-skew", short(5), Attack::ClockSkew(5_000_000), reject(2, CheckCode::Chk5)),
        s(
            "clock-skew-tolerated",
            short(5),
            Attack::ClockSkew(500_000),
            Outcome::Complete(TerminationReason::HangupA),
        ),
        tampered(
            "tampered-loss",
            TrafficProfile {
                drops: (10..16).map(|i| (Direction::AtoB, i)).collect(),
                ..short(5)
            },
            reject(2, CheckCode::Chk4),
        ),
        tampered(
            "tampered-one-way",
            TrafficProfile {
                active: [true, false],
                ..short(5)
            },
            reject(4, CheckCode::Interleave),
        ),
        tampered("tampered-ts-jump", ts_jump_profile(), reject(4, CheckCode::Chk6)),
        s(
            "ts-jump",
            ts_jump_profile(),
            Attack::None,
            Outcome::Complete(TerminationReason::TamperDetected),
        ),
        s(
            "silent-callee",
            TrafficProfile {
                active: [true, false],
                ..short(5)
            },
            Attack::None,
            Outcome::Complete(TerminationReason::HangupA),
        ),
        Scenario {
            storage_capacity: Some(2_000),
            ..s("storage-full", short(5), Attack::None, reject(2, CheckCode::Storage))
        },
    ]
}

fn ts_jump_profile() -> TrafficProfile {
    TrafficProfile {
        ts_jump: Some(TimestampJump {
            direction: Direction::AtoB,
            at_packet: 75,
            ticks: 8000 * 10,
        }),
        ..short(5)
    }
}

pub fn scenario_by_name(name: &str) -> Option<Scenario> {
    scenarios().into_iter().find(|s| s.name == name)
}

fn recorder_config(mode: RecorderMode) -> RecorderConfig {
    RecorderConfig {
        enforce_checks: mode == RecorderMode::Honest,
        ..RecorderConfig::default()
    }
}

fn arc_config() -> ArcConfig {
    ArcConfig {
        interval: crate::chain::chunker::DEFAULT_INTERVAL,
        qos: QosPolicy::default(),
    }
}

type Frames = Vec<(Timestamp, Vec<u8>)>;

fn check_index(frames: &Frames, i: usize) -> Result<(), HarnessError> {
    if i < frames.len() {
        Ok(())
    } else {
        Err(HarnessError::Config(format!(
            "frame {i} out of range, the call has {} frames",
            frames.len()
        )))
    }
}

/// Re-signs frames with `identity`, re-linking them from `prev`.
pub fn resign_tail(
    tail: &[(Timestamp, Vec<u8>)],
    mut prev: HashDigest,
    identity: &SignerIdentity,
) -> Result<Frames, HarnessError> {
    let mut out = Vec::with_capacity(tail.len());
    for (t, frame) in tail {
        let env = Envelope::decode(frame).map_err(|e| HarnessError::Config(e.to_string()))?;
        let mut body =
            IntervalBody::decode(env.kind, &env.body).map_err(|e| HarnessError::Config(e.to_string()))?;
        match &mut body {
            IntervalBody::Voice(v) => v.prev_hash = prev,
            IntervalBody::Final(f) => f.prev_hash = prev,
            IntervalBody::Initial(_) => return Err(HarnessError::Config("initial inside a tail".into())),
        }
        let raw = body.encode().map_err(|e| HarnessError::Config(e.to_string()))?;
        let encoded = sign_envelope(identity, env.kind, raw, false)
            .and_then(|e| e.encode())
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        prev = envelope_hash(&encoded);
        out.push((*t, encoded));
    }
    Ok(out)
}

struct World {
    pki: TestPki,
    rng: ChaCha8Rng,
    store: Arc<ArchiveStore>,
    _dir: tempfile::TempDir,
}

impl World {
    fn record(&mut self, call: &GeneratedCall, mode: RecorderMode, start: Timestamp) -> Result<Recording, HarnessError> {
        Ok(record_call(
            call,
            &self.pki.recorder,
            &self.pki.tsa_initial,
            recorder_config(mode),
            start,
            &mut self.rng,
        )?)
    }
}

/// Runs one scenario; deterministic for a given seed.
pub fn run_scenario(scenario: &Scenario, seed: u64) -> Result<ScenarioOutcome, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pki = TestPki::generate(&mut rng);
    let dir = tempfile::tempdir()?;
    let store = ArchiveStore::open(dir.path(), scenario.storage_capacity).map_err(|e| HarnessError::Io(std::io::Error::other(e)))?;
    let mut world = World {
        pki,
        rng,
        store,
        _dir: dir,
    };

    let mut profile = scenario.profile.clone();
    if let Attack::ExcessLoss(f) = scenario.attack {
        profile.loss = f;
    }
    let call = generate_call(&profile, world.rng.next_u64());
    let rec = world.record(&call, scenario.recorder, SCENARIO_EPOCH)?;
    let mut frames = rec.frames.clone();
    let mut call_id = rec.call_id;
    let mut skew = 0;

    match &scenario.attack {
        Attack::None | Attack::ExcessLoss(_) => {}
        Attack::ClockSkew(s) => skew = *s,
        Attack::BitFlip { frame, bit } => {
            check_index(&frames, *frame)?;
            let f = &mut frames[*frame].1;
            if bit / 8 >= f.len() {
                return Err(HarnessError::Config(format!("bit {bit} beyond frame of {} bytes", f.len())));
            }
            f[bit / 8] ^= 1 << (bit % 8);
        }
        Attack::DropInterval(n) => {
            check_index(&frames, *n)?;
            frames.remove(*n);
        }
        Attack::Reorder(n, m) => {
            check_index(&frames, *n.max(m))?;
            frames.swap(*n, *m);
        }
        Attack::Truncate => {
            frames.pop();
        }
        Attack::DuplicateFrame(n) => {
            check_index(&frames, *n)?;
            let dup = frames[*n].clone();
            frames.insert(n + 1, dup);
        }
        Attack::MitmContinue(n) => {
            check_index(&frames, *n + 1)?;
            let intruder = world.pki.issue_recorder(&mut world.rng, "sva-recorder");
            let prev = envelope_hash(&frames[*n].1);
            let tail = resign_tail(&frames[n + 1..], prev, &intruder)?;
            frames.truncate(n + 1);
            frames.extend(tail);
        }
        Attack::ReplayInitialNewTail => {
            // The original call is archived first.
            let first = archive_frames(
                Arc::clone(&world.store),
                &world.pki,
                arc_config(),
                rec.call_id,
                &rec.frames,
                0,
            );
            if first.status != ArcSessionStatus::Completed {
                return Err(HarnessError::Config(format!("original call not archived: {:?}", first.status)));
            }
            let later = SCENARIO_EPOCH.saturating_add(call.duration * 2);
            let other = generate_call(&profile, world.rng.next_u64());
            let rec2 = world.record(&other, scenario.recorder, later)?;
            call_id = rec2.call_id;
            frames = std::iter::once(rec.frames[0].clone())
                .chain(rec2.frames[1..].iter().cloned())
                .collect();
        }
        Attack::CompromisedKeyReplay => {
            // A fresh initial with new nonce, signed with the stolen key,
            // carrying the token of the recorded call's initial.
            let old = Envelope::decode(&rec.frames[0].1).map_err(|e| HarnessError::Config(e.to_string()))?;
            let mut meta = rec.meta.clone();
            world.rng.fill_bytes(&mut meta.nonce);
            let body = IntervalBody::Initial(meta)
                .encode()
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            let mut forged = sign_envelope(&world.pki.recorder, EnvelopeKind::Initial, body, true)
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            forged.tsa_token = old.tsa_token.clone();
            let forged = forged.encode().map_err(|e| HarnessError::Config(e.to_string()))?;
            let tail = resign_tail(&rec.frames[1..], envelope_hash(&forged), &world.pki.recorder)?;
            call_id = crate::harness::traffic::random_call_id(&mut world.rng);
            frames = std::iter::once((rec.frames[0].0, forged)).chain(tail).collect();
        }
        Attack::BackdateCombined => {
            // An earlier call whose stream never reached the archive donates
            // its stamped initial.
            let earlier = SCENARIO_EPOCH.saturating_sub(Duration::from_secs(86_400));
            let old_call = generate_call(&profile, world.rng.next_u64());
            let old = world.record(&old_call, scenario.recorder, earlier)?;
            frames = std::iter::once(old.frames[0].clone())
                .chain(rec.frames[1..].iter().cloned())
                .collect();
        }
    }

    let run = archive_frames(Arc::clone(&world.store), &world.pki, arc_config(), call_id, &frames, skew);
    let actual = match run.status {
        ArcSessionStatus::Rejected { frame, code } => Outcome::Reject { frame, code },
        ArcSessionStatus::Completed => {
            let last = Envelope::decode(&frames.last().expect("completed").1).expect("accepted");
            match IntervalBody::decode(last.kind, &last.body) {
                Ok(IntervalBody::Final(f)) => Outcome::Complete(f.reason),
                _ => unreachable!("completed sessions end with a final interval"),
            }
        }
        ArcSessionStatus::Incomplete | ArcSessionStatus::Open => Outcome::Incomplete,
    };
    let submitted = run.reports.len();

    let archived = std::fs::read(&run.path)
        .or_else(|_| std::fs::read(run.path.with_extension(crate::arc::store::REJECTED_EXT)))
        .unwrap_or_default();
    let archive_digest = hex::encode(Sha256::digest(&archived));

    let stream = frames_to_file(frames.iter().map(|(_, f)| f.as_slice()));
    let offline = verify_archive(&stream, &world.pki.root, world.pki.tsa_initial.leaf(), &arc_config()).status;
    let offline_agrees = match actual {
        Outcome::Reject {
            code: CheckCode::Chk5 | CheckCode::Nonce | CheckCode::Storage,
            ..
        } => None,
        Outcome::Reject { frame, code } => Some(offline == VerificationStatus::Rejected { position: frame - 1, code }),
        Outcome::Complete(_) => Some(offline == VerificationStatus::CompleteVerified),
        Outcome::Incomplete => Some(offline == VerificationStatus::IncompletePrefixVerified),
    };

    Ok(ScenarioOutcome {
        name: scenario.name,
        seed,
        expected: scenario.expected,
        actual,
        offline,
        offline_agrees,
        frames_submitted: submitted,
        archive_digest,
        passed: actual == scenario.expected && offline_agrees != Some(false),
    })
}

/// Runs every scenario, optionally on separate threads.
pub fn run_all(seed: u64, parallel: bool) -> Vec<Result<ScenarioOutcome, HarnessError>> {
    let table = scenarios();
    if !parallel {
        return table.iter().map(|s| run_scenario(s, seed)).collect();
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = table
            .iter()
            .map(|s| scope.spawn(move || run_scenario(s, seed)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(HarnessError::Config("scenario panicked".into()))))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_scenario_passes() {
        for r in run_all(7, true) {
            let o = r.unwrap();
            assert!(o.passed, "{}: expected {}, got {}, offline {}", o.name, o.expected, o.actual, o.offline);
        }
    }
}
