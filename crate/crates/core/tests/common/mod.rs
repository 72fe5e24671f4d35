#![allow(dead_code)]

use std::time::Duration;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sva::arc::ArcConfig;
use sva::chain::IntervalBody;
use sva::envelope::pki::TestPki;
use sva::envelope::Envelope;
use sva::harness::{frames_to_file, generate_call, record_call, Recording, TrafficProfile};
use sva::time::Timestamp;
use sva::verify::{verify_archive, VerificationResult};
use sva::vsec::RecorderConfig;

pub struct Fixture {
    pub pki: TestPki,
    pub rng: ChaCha8Rng,
}

impl Fixture {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            pki: TestPki::generate(&mut rng),
            rng,
        }
    }

    pub fn record_with(&mut self, profile: &TrafficProfile, config: RecorderConfig, start: Timestamp) -> Recording {
        let call = generate_call(profile, self.rng.next_u64());
        record_call(&call, &self.pki.recorder, &self.pki.tsa_initial, config, start, &mut self.rng).unwrap()
    }

    pub fn record(&mut self, profile: &TrafficProfile, start: Timestamp) -> Recording {
        self.record_with(profile, RecorderConfig::default(), start)
    }

    pub fn verify(&self, file: &[u8]) -> VerificationResult {
        verify_archive(file, &self.pki.root, self.pki.tsa_initial.leaf(), &ArcConfig::default())
    }
}

pub fn profile(secs: u64) -> TrafficProfile {
    TrafficProfile::default().with_duration(Duration::from_secs(secs))
}

pub fn file_of(frames: &[(Timestamp, Vec<u8>)]) -> Vec<u8> {
    frames_to_file(frames.iter().map(|(_, f)| f.as_slice()))
}

pub fn body(frame: &[u8]) -> IntervalBody {
    let env = Envelope::decode(frame).unwrap();
    IntervalBody::decode(env.kind, &env.body).unwrap()
}
