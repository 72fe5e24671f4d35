//! Acceptance criteria. Runs without the libtest harness so every criterion
//! prints one PASS/FAIL line; the process fails if any criterion fails.

use std::collections::{BTreeSet, HashSet};
use std::panic::{self, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sva::arc::{
    period_anchor, verify_anchor, AnchorError, ArcConfig, ArcContext, ArcSession, ArcSessionStatus, ArchiveStore,
    CheckContext, CheckStatus, FrameChecker,
};
use sva::chain::{Direction, IntervalBody, TerminationReason};
use sva::envelope::pki::TestPki;
use sva::envelope::tsa::{tsa_issue, LocalTsa};
use sva::envelope::{envelope_hash, sign_envelope, Envelope, EnvelopeKind};
use sva::harness::{
    self, archive_frames, frames_to_file, generate_call, record_call, resign_tail, Attack, Outcome, Recording,
    TrafficProfile, SCENARIO_EPOCH,
};
use sva::netproto::{CheckCode, Response};
use sva::rtp::{ReplayWindow, RtpPacket, WindowDecision};
use sva::time::{ManualClock, Timestamp};
use sva::verify::{verify_archive, VerificationStatus};
use sva::vsec::RecorderConfig;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)*) => {
        if !$cond {
            return Err(format!($($msg)*));
        }
    };
}

const INTERVAL: Duration = Duration::from_secs(1);

struct Fixture {
    pki: TestPki,
    rng: ChaCha8Rng,
}

impl Fixture {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            pki: TestPki::generate(&mut rng),
            rng,
        }
    }

    fn record(&mut self, profile: &TrafficProfile, start: Timestamp) -> Recording {
        let call = generate_call(profile, self.rng.next_u64());
        record_call(
            &call,
            &self.pki.recorder,
            &self.pki.tsa_initial,
            RecorderConfig::default(),
            start,
            &mut self.rng,
        )
        .expect("recorder starts")
    }

    fn verify(&self, frames: &[Vec<u8>]) -> VerificationStatus {
        let file = frames_to_file(frames.iter().map(|f| f.as_slice()));
        verify_archive(&file, &self.pki.root, self.pki.tsa_initial.leaf(), &ArcConfig::default()).status
    }

    fn checker(&self) -> FrameChecker {
        FrameChecker::new(self.pki.root.clone(), self.pki.tsa_initial.leaf().clone(), ArcConfig::default())
    }
}

fn profile(secs: u64) -> TrafficProfile {
    TrafficProfile::default().with_duration(Duration::from_secs(secs))
}

fn bodies(frames: &[(Timestamp, Vec<u8>)]) -> Vec<IntervalBody> {
    frames
        .iter()
        .map(|(_, f)| {
            let env = Envelope::decode(f).unwrap();
            IntervalBody::decode(env.kind, &env.body).unwrap()
        })
        .collect()
}

fn voice_count(frames: &[(Timestamp, Vec<u8>)]) -> usize {
    bodies(frames)
        .iter()
        .filter(|b| matches!(b, IntervalBody::Voice(_)))
        .count()
}

fn final_reason(frames: &[(Timestamp, Vec<u8>)]) -> Option<TerminationReason> {
    match bodies(frames).last() {
        Some(IntervalBody::Final(f)) => Some(f.reason),
        _ => None,
    }
}

// 1

fn clean_run() -> Verdict {
    let t0 = Instant::now();
    let mut fx = Fixture::new(101);
    let rec = fx.record(&profile(10), SCENARIO_EPOCH);
    let dir = tempfile::tempdir().unwrap();
    let store = ArchiveStore::open(dir.path(), None).unwrap();
    let run = archive_frames(store, &fx.pki, ArcConfig::default(), rec.call_id, &rec.frames, 0);
    ensure!(run.status == ArcSessionStatus::Completed, "archive status {:?}", run.status);
    let file = std::fs::read(&run.path).unwrap();
    let result = verify_archive(&file, &fx.pki.root, fx.pki.tsa_initial.leaf(), &ArcConfig::default());
    let elapsed = t0.elapsed();
    ensure!(
        result.status == VerificationStatus::CompleteVerified,
        "verification {}",
        result.status
    );
    let summary = result.summary.unwrap();
    ensure!(summary.voice_intervals == 20, "{} voice intervals, expected 20", summary.voice_intervals);
    ensure!(summary.packets == [500, 500], "packets {:?}", summary.packets);
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!(
        "complete and verified, {} voice intervals, {:?} packets, {:.2?}",
        summary.voice_intervals, summary.packets, elapsed
    ))
}

// 2

#[derive(Debug, Clone, Copy, PartialEq)]
enum Region {
    Magic,
    Kind,
    Length,
    Body,
    Cert,
    Signature,
    TsaFlag,
    TsaTime,
    TsaSig,
    TsaCertId,
}

/// Classifies every byte of an encoded envelope, parsing the wire layout
/// directly.
fn regions(env: &[u8]) -> Vec<Region> {
    let mut out = Vec::with_capacity(env.len());
    let be = |at: usize, n: usize| env[at..at + n].iter().fold(0usize, |a, b| (a << 8) | *b as usize);
    let mut push = |r: Region, n: usize| out.extend(std::iter::repeat_n(r, n));
    push(Region::Magic, 4);
    push(Region::Kind, 1);
    let mut at = 5;
    let body_len = be(at, 4);
    push(Region::Length, 4);
    push(Region::Body, body_len);
    at += 4 + body_len;
    let certs = be(at, 2);
    push(Region::Length, 2);
    at += 2;
    for _ in 0..certs {
        let n = be(at, 4);
        push(Region::Length, 4);
        push(Region::Cert, n);
        at += 4 + n;
    }
    let sig = be(at, 4);
    push(Region::Length, 4);
    push(Region::Signature, sig);
    at += 4 + sig;
    push(Region::TsaFlag, 1);
    if env[at] == 1 {
        at += 1;
        push(Region::TsaTime, 8);
        at += 8;
        let n = be(at, 4);
        push(Region::Length, 4);
        push(Region::TsaSig, n);
        at += 4 + n;
        let n = be(at, 2);
        push(Region::Length, 2);
        push(Region::TsaCertId, n);
        at += 2 + n;
    } else {
        at += 1;
    }
    assert_eq!(at, env.len());
    out
}

/// Check code a single flipped bit must produce.
fn expected_for_flip(env: &[u8], region: Region, byte: usize, bit: usize) -> CheckCode {
    match region {
        Region::Magic | Region::Length | Region::TsaFlag => CheckCode::Malformed,
        Region::Kind => {
            let was_initial = env[4] == 0;
            let v = env[byte] ^ (1 << bit);
            if v > 2 || (v == 0) != was_initial {
                CheckCode::Malformed
            } else {
                CheckCode::Chk2
            }
        }
        Region::Body | Region::Cert | Region::Signature => CheckCode::Chk2,
        Region::TsaTime | Region::TsaSig | Region::TsaCertId => CheckCode::Chk1,
    }
}

fn rejected(position: usize, code: CheckCode) -> VerificationStatus {
    VerificationStatus::Rejected { position, code }
}

fn tamper_suite() -> Verdict {
    let mut fx = Fixture::new(202);
    let rec = fx.record(&profile(9), SCENARIO_EPOCH);
    let frames: Vec<Vec<u8>> = rec.frames.iter().map(|(_, f)| f.clone()).collect();
    let n = frames.len();
    let last = n - 1;
    ensure!(n <= 20, "call has {n} envelopes");
    ensure!(
        fx.verify(&frames) == VerificationStatus::CompleteVerified,
        "unmodified call does not verify"
    );
    let mut cases = 0usize;
    let mut failures = Vec::new();
    let mut expect = |label: String, got: VerificationStatus, want: VerificationStatus| {
        cases += 1;
        if got != want && failures.len() < 10 {
            failures.push(format!("{label}: got {got}, expected {want}"));
        }
    };

    for i in 0..n {
        let mut f = frames.clone();
        f.remove(i);
        let want = match i {
            0 => rejected(0, CheckCode::Chk3),
            i if i == last => VerificationStatus::IncompletePrefixVerified,
            i => rejected(i, CheckCode::Chain),
        };
        expect(format!("drop {i}"), fx.verify(&f), want);
    }
    for i in 0..n {
        for j in i + 1..n {
            let mut f = frames.clone();
            f.swap(i, j);
            let want = if i == 0 { rejected(0, CheckCode::Chk3) } else { rejected(i, CheckCode::Chain) };
            expect(format!("swap {i},{j}"), fx.verify(&f), want);
        }
    }
    for i in 0..n {
        let mut f = frames.clone();
        f.insert(i + 1, frames[i].clone());
        let want = if i == 0 || i == last {
            rejected(i + 1, CheckCode::Chk3)
        } else {
            rejected(i + 1, CheckCode::Chain)
        };
        expect(format!("duplicate {i}"), fx.verify(&f), want);
    }
    for k in 0..n {
        expect(
            format!("truncate to {k}"),
            fx.verify(&frames[..k]),
            VerificationStatus::IncompletePrefixVerified,
        );
    }
    let intruder = fx.pki.issue_recorder(&mut fx.rng, "sva-recorder");
    for i in 0..last {
        let tail = resign_tail(&rec.frames[i + 1..], envelope_hash(&frames[i]), &intruder).unwrap();
        let f: Vec<Vec<u8>> = frames[..=i].iter().cloned().chain(tail.into_iter().map(|(_, f)| f)).collect();
        expect(format!("wrong signer after {i}"), fx.verify(&f), rejected(i + 1, CheckCode::Chk2));
    }
    {
        // A whole call signed by a key outside the trust root.
        let (_, outsider) = sva::envelope::pki::standalone_identity(&mut fx.rng, "sva-recorder");
        let env = Envelope::decode(&frames[0]).unwrap();
        let mut forged = sign_envelope(&outsider, EnvelopeKind::Initial, env.body.clone(), true).unwrap();
        forged.tsa_token = Some(tsa_issue(&fx.pki.tsa_initial, &forged.signed_prefix(), SCENARIO_EPOCH));
        let forged = forged.encode().unwrap();
        let tail = resign_tail(&rec.frames[1..], envelope_hash(&forged), &outsider).unwrap();
        let f: Vec<Vec<u8>> = std::iter::once(forged).chain(tail.into_iter().map(|(_, f)| f)).collect();
        expect("untrusted signer".into(), fx.verify(&f), rejected(0, CheckCode::Chk2));
    }

    // Reused nonce: only the archive's nonce index can tell.
    let nonce_verdict = {
        let dir = tempfile::tempdir().unwrap();
        let store = ArchiveStore::open(dir.path(), None).unwrap();
        let first = archive_frames(Arc::clone(&store), &fx.pki, ArcConfig::default(), rec.call_id, &rec.frames, 0);
        assert_eq!(first.status, ArcSessionStatus::Completed);
        let later = SCENARIO_EPOCH.saturating_add(Duration::from_secs(60));
        let other = fx.record(&profile(3), later);
        let env = Envelope::decode(&frames[0]).unwrap();
        let IntervalBody::Initial(mut meta) = IntervalBody::decode(env.kind, &env.body).unwrap() else {
            unreachable!()
        };
        meta.start_time = later;
        let mut init = sign_envelope(
            &fx.pki.recorder,
            EnvelopeKind::Initial,
            IntervalBody::Initial(meta).encode().unwrap(),
            true,
        )
        .unwrap();
        init.tsa_token = Some(tsa_issue(&fx.pki.tsa_initial, &init.signed_prefix(), later));
        let init = init.encode().unwrap();
        let tail = resign_tail(&other.frames[1..], envelope_hash(&init), &fx.pki.recorder).unwrap();
        let forged: Vec<_> = std::iter::once((later, init)).chain(tail).collect();
        let run = archive_frames(store, &fx.pki, ArcConfig::default(), other.call_id, &forged, 0);
        run.status
    };
    cases += 1;
    if nonce_verdict
        != (ArcSessionStatus::Rejected {
            frame: 1,
            code: CheckCode::Nonce,
        })
    {
        failures.push(format!("reused nonce: archive status {nonce_verdict:?}"));
    }

    // Bit flips: every bit outside body and signature, plus at least 1000
    // sampled bits per envelope (all bits when the envelope is smaller).
    let mut flips = 0usize;
    let mut false_accepts = 0usize;
    let mut checker = fx.checker();
    let ctx = CheckContext::offline();
    let mut rng = ChaCha8Rng::seed_from_u64(2002);
    for (k, env) in frames.iter().enumerate() {
        let map = regions(env);
        let total_bits = env.len() * 8;
        let mut bits: BTreeSet<usize> = if total_bits <= 1000 {
            (0..total_bits).collect()
        } else {
            sample(&mut rng, total_bits, 1000).into_iter().collect()
        };
        for (byte, r) in map.iter().enumerate() {
            if !matches!(r, Region::Body | Region::Signature | Region::Cert) {
                bits.extend(byte * 8..byte * 8 + 8);
            }
        }
        for bit in bits {
            let (byte, b) = (bit / 8, bit % 8);
            let mut mutated = env.clone();
            mutated[byte] ^= 1 << b;
            let want = expected_for_flip(env, map[byte], byte, b);
            let (report, accepted) = checker.clone().check(&mutated, &ctx);
            flips += 1;
            if accepted.is_some() {
                false_accepts += 1;
            }
            let wrong = report.position != k || report.failure().map(|(c, _)| c) != Some(want);
            if wrong && failures.len() < 10 {
                failures.push(format!(
                    "flip frame {k} byte {byte} bit {b} ({:?}): got {:?} at {}, expected {want}",
                    map[byte],
                    report.failure().map(|(c, _)| c),
                    report.position
                ));
            }
        }
        let (report, _) = checker.check(env, &ctx);
        ensure!(report.passed(), "unmodified frame {k} failed");
    }

    ensure!(failures.is_empty(), "{}", failures.join("; "));
    ensure!(false_accepts == 0, "{false_accepts} false accepts");
    Ok(format!(
        "{n} envelopes, {cases} structural mutations, {flips} bit flips, 0 false accepts"
    ))
}

// 3

fn qos_boundary() -> Verdict {
    let mut fx = Fixture::new(303);
    let mut p = profile(200);
    ensure!(p.packets_per_direction() == 10_000, "trace length {}", p.packets_per_direction());
    p.drops = (0..100).map(|k| (Direction::AtoB, 98 + 100 * k)).collect();
    let at_threshold = fx.record(&p, SCENARIO_EPOCH);
    ensure!(
        final_reason(&at_threshold.frames) == Some(TerminationReason::HangupA),
        "1.00% loss ended with {:?}",
        final_reason(&at_threshold.frames)
    );
    let dir = tempfile::tempdir().unwrap();
    let store = ArchiveStore::open(dir.path(), None).unwrap();
    let run = archive_frames(
        Arc::clone(&store),
        &fx.pki,
        ArcConfig::default(),
        at_threshold.call_id,
        &at_threshold.frames,
        0,
    );
    ensure!(run.status == ArcSessionStatus::Completed, "archive on 1.00% loss: {:?}", run.status);

    p.drops.push((Direction::AtoB, 9_997));
    let over = fx.record(&p, SCENARIO_EPOCH.saturating_add(Duration::from_secs(1000)));
    ensure!(
        final_reason(&over.frames) == Some(TerminationReason::QosViolation),
        "1.01% loss ended with {:?}",
        final_reason(&over.frames)
    );
    let run = archive_frames(store, &fx.pki, ArcConfig::default(), over.call_id, &over.frames, 0);
    ensure!(run.status == ArcSessionStatus::Completed, "archive on 1.01% loss: {:?}", run.status);
    Ok(format!(
        "100/10000 lost -> {}, 101/10000 lost -> {}",
        TerminationReason::HangupA,
        TerminationReason::QosViolation
    ))
}

// 4

fn clock_drift() -> Verdict {
    let mut fx = Fixture::new(404);
    let rec = fx.record(&profile(3), SCENARIO_EPOCH);
    let mut base = fx.checker();
    let nonce_free = |_: &[u8; 16]| false;
    let ctx0 = CheckContext {
        arrival: Some(rec.frames[0].0),
        nonce_seen: Some(&nonce_free),
    };
    ensure!(base.check(&rec.frames[0].1, &ctx0).0.passed(), "initial rejected");
    let bound = 2 * INTERVAL.as_micros() as i64;
    let b = bodies(&rec.frames);
    let mut lines = Vec::new();
    for idx in [1, rec.frames.len() - 1] {
        let time = b[idx].time().as_micros() as i64;
        for (delta, pass) in [(bound, true), (-bound, true), (bound + 1, false), (-bound - 1, false), (0, true)] {
            let ctx = CheckContext {
                arrival: Some(Timestamp((time + delta) as u64)),
                nonce_seen: Some(&nonce_free),
            };
            let mut c = base.clone();
            for (_, f) in &rec.frames[1..idx] {
                let t = Envelope::decode(f).unwrap();
                let body = IntervalBody::decode(t.kind, &t.body).unwrap();
                let on_time = CheckContext {
                    arrival: Some(body.time()),
                    nonce_seen: Some(&nonce_free),
                };
                assert!(c.check(f, &on_time).0.passed());
            }
            let (report, _) = c.check(&rec.frames[idx].1, &ctx);
            let status = report.status(CheckCode::Chk5);
            let ok = if pass {
                *status == CheckStatus::Pass && report.passed()
            } else {
                status.is_fail() && report.failure().map(|(c, _)| c) == Some(CheckCode::Chk5)
            };
            ensure!(ok, "frame {idx} offset {delta} us: {status:?}");
        }
        lines.push(idx);
    }
    Ok(format!(
        "offsets of +-{bound} us pass, +-{} us fail (frames {lines:?})",
        bound + 1
    ))
}

// 5 and 6 share a 60 s recording.

fn sixty_seconds() -> &'static Recording {
    use std::sync::OnceLock;
    static REC: OnceLock<Recording> = OnceLock::new();
    REC.get_or_init(|| {
        let mut fx = Fixture::new(505);
        let mut p = profile(60);
        p.jitter = Duration::from_millis(15);
        fx.record(&p, SCENARIO_EPOCH)
    })
}

fn memory_bound() -> Verdict {
    let rec = sixty_seconds();
    ensure!(
        final_reason(&rec.frames) == Some(TerminationReason::HangupA),
        "call ended with {:?}",
        final_reason(&rec.frames)
    );
    let p = TrafficProfile::default();
    let per_second = 2 * p.packets_per_second as usize * (12 + p.payload_len);
    let limit_bytes = 2 * INTERVAL.as_secs() as usize * per_second;
    let b = rec.buffer;
    ensure!(b.high_water_bytes <= limit_bytes, "{} bytes buffered, limit {limit_bytes}", b.high_water_bytes);
    ensure!(b.high_water_span <= 2 * INTERVAL, "buffered span {:?}", b.high_water_span);
    Ok(format!(
        "high water {} bytes / {} packets / span {:?} (limit {limit_bytes} bytes, {:?})",
        b.high_water_bytes,
        b.high_water_packets,
        b.high_water_span,
        2 * INTERVAL
    ))
}

fn signing_rate() -> Verdict {
    let rec = sixty_seconds();
    let s = rec.counters.signatures;
    ensure!(s <= 125, "{s} signatures");
    ensure!(s as usize == rec.frames.len(), "{s} signatures for {} envelopes", rec.frames.len());
    Ok(format!("{s} signatures over 60 s ({} voice intervals)", voice_count(&rec.frames)))
}

// 7

fn overhead() -> Verdict {
    let rec = sixty_seconds();
    let mut worst = 0usize;
    let mut voice = 0;
    for ((_, f), body) in rec.frames.iter().zip(bodies(&rec.frames)) {
        if let IntervalBody::Voice(v) = body {
            voice += 1;
            let payload: usize = v.packets.iter().map(Vec::len).sum::<usize>() + 8 * v.abs_seqs.len();
            worst = worst.max(f.len() - payload);
        }
    }
    ensure!(voice > 0, "no voice intervals");
    ensure!(worst <= 512, "overhead {worst} bytes");
    Ok(format!("max overhead {worst} bytes over {voice} voice intervals"))
}

// 8

fn replay_window() -> Verdict {
    const STEPS: usize = 150_000;
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut w = ReplayWindow::new(Duration::from_secs(2));
    let t0: u64 = (1 << 40) + rng.gen::<u16>() as u64;
    let mut highest = t0;
    let mut seen: HashSet<u64> = HashSet::new();
    let mut holes: Vec<u64> = Vec::new();
    let mut recent: Vec<u64> = Vec::new();
    let (mut dups, mut late, mut rollovers) = (0usize, 0usize, 0usize);
    let packet = |t: u64| RtpPacket::build(0, false, t as u16, (t as u32).wrapping_mul(160), 7, vec![], vec![0; 4]);
    for step in 0..STEPS {
        let t = if step == 0 {
            t0
        } else {
            let roll: f64 = rng.gen();
            holes.retain(|h| highest - h < 32);
            if roll < 0.1 && !recent.is_empty() {
                dups += 1;
                recent[rng.gen_range(0..recent.len())]
            } else if roll < 0.15 && !holes.is_empty() {
                late += 1;
                holes.swap_remove(rng.gen_range(0..holes.len()))
            } else {
                let gap = if rng.gen_bool(0.7) { 1 } else { rng.gen_range(2..=1000) };
                holes.extend((highest + 1..highest + gap).rev().take(31));
                if (highest + gap) >> 16 != highest >> 16 {
                    rollovers += 1;
                }
                highest + gap
            }
        };
        let want = if seen.contains(&t) || t < t0 || highest.max(t) - t >= 32 {
            WindowDecision::Replay
        } else {
            WindowDecision::Accept(t - t0)
        };
        let got = w.accept(&packet(t), Timestamp(0), None);
        ensure!(got == want, "step {step}: true seq {t}, got {got:?}, expected {want:?}");
        if let WindowDecision::Accept(_) = got {
            seen.insert(t);
            recent.push(t);
            if recent.len() > 64 {
                recent.remove(0);
            }
        }
        highest = highest.max(t);
    }
    ensure!(rollovers > 10, "only {rollovers} rollovers");
    Ok(format!(
        "{STEPS} steps, {rollovers} rollovers, {dups} duplicates rejected, {late} late packets placed"
    ))
}

// 9

fn backdating() -> Verdict {
    let s = harness::scenarios()
        .into_iter()
        .find(|s| s.attack == Attack::BackdateCombined)
        .ok_or("no back-dating scenario")?;
    let o = harness::run_scenario(&s, 909).map_err(|e| e.to_string())?;
    let want = Outcome::Reject {
        frame: 2,
        code: CheckCode::Chain,
    };
    ensure!(o.actual == want, "archive: {}", o.actual);
    ensure!(o.offline == rejected(1, CheckCode::Chain), "offline: {}", o.offline);
    Ok(format!("archive {}, offline {}", o.actual, o.offline))
}

// 10

fn anchor_tamper() -> Verdict {
    let mut fx = Fixture::new(1010);
    let dir = tempfile::tempdir().unwrap();
    let store = ArchiveStore::open(dir.path(), None).unwrap();
    let clock = ManualClock::new(SCENARIO_EPOCH);
    for i in 0..3u64 {
        let start = SCENARIO_EPOCH.saturating_add(Duration::from_secs(100 * i));
        let rec = fx.record(&profile(2 + i), start);
        let ctx = Arc::new(ArcContext {
            store: Arc::clone(&store),
            trust_root: fx.pki.root.clone(),
            tsa_cert: fx.pki.tsa_initial.leaf().clone(),
            config: ArcConfig::default(),
            clock: Arc::new(clock.clone()),
        });
        let mut session = ArcSession::new(ctx, rec.call_id);
        for (t, f) in &rec.frames {
            clock.set(*t);
            ensure!(session.handle_frame(f) == Response::Ack, "call {i} rejected");
        }
        ensure!(session.finish() == ArcSessionStatus::Completed, "call {i} incomplete");
    }
    let mut tsa = LocalTsa::new(Arc::new(fx.pki.tsa_periodic.clone()), Arc::new(clock.clone()));
    let end = SCENARIO_EPOCH.saturating_add(Duration::from_secs(1000));
    let (anchor, _) = period_anchor(&store, Timestamp(0), end, &mut tsa).map_err(|e| e.to_string())?;
    ensure!(anchor.files.len() == 3, "{} files anchored", anchor.files.len());
    let t2 = fx.pki.tsa_periodic.leaf();
    verify_anchor(&store, &anchor, t2).map_err(|e| format!("untouched store: {e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(10_010);
    let mut touched = [0usize; 3];
    const TRIALS: usize = 120;
    for trial in 0..TRIALS {
        let fi = trial % 3;
        let path = store.root().join(&anchor.files[fi]);
        let original = std::fs::read(&path).unwrap();
        let pos = rng.gen_range(0..original.len());
        let mut changed = original.clone();
        changed[pos] ^= rng.gen_range(1..=255u8);
        std::fs::write(&path, &changed).unwrap();
        let r = verify_anchor(&store, &anchor, t2);
        std::fs::write(&path, &original).unwrap();
        ensure!(
            matches!(r, Err(AnchorError::RootMismatch)),
            "file {fi} byte {pos}: {r:?}"
        );
        touched[fi] += 1;
    }
    verify_anchor(&store, &anchor, t2).map_err(|e| format!("restored store: {e}"))?;
    Ok(format!("{TRIALS} modifications across {touched:?} positions per file all gave RootMismatch"))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("clean 10 s call", clean_run),
        ("tamper detection", tamper_suite),
        ("loss threshold boundary", qos_boundary),
        ("clock drift bound", clock_drift),
        ("recorder memory bound", memory_bound),
        ("signing rate", signing_rate),
        ("voice envelope overhead", overhead),
        ("replay window", replay_window),
        ("back-dating attack", backdating),
        ("anchor tamper evidence", anchor_tamper),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let t = Instant::now();
        let verdict = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match verdict {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail} [{:.2?}]", i + 1, t.elapsed()),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
