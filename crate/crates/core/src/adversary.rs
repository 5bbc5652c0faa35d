//! Attack harnesses: scripted adversaries replaying, forging, and
//! classifying captured traffic, each returning a quantitative verdict.
//!
//! Every harness is deterministic given a seed and reports attempts and
//! successes rather than a bare boolean, so regressions show up as a
//! changed count instead of a flipped flag. The harnesses drive the
//! protocol state machines directly — timing is irrelevant to what they
//! measure, and a thousand full handshakes run in seconds.

use std::collections::HashSet;

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::{sym_encrypt, SymCiphertext, SymKey};
use crate::protocol::{
    make_challenge, AuthServer, FinalOutcome, RejectReason, ServerRequest, SizeProfile, TagId,
    TagProtocol,
};
use crate::rng::{stream, StreamId};

/// Which scripted adversary produced a verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    /// Replays complete captured sessions: the response pair to the
    /// server, the final message to its own and to fresh sessions.
    Replay,
    /// Resends a captured tag response inside later frames, poses as a
    /// rogue reader replaying captured challenges and finals, and retries
    /// after revocation.
    Resend,
    /// Fabricated tags running the real protocol under invented
    /// identities.
    ImpersonateTag,
    /// A rogue reader serving forged or stale final messages.
    ImpersonateReader,
    /// A passive observer trying to link two sightings of one tag from
    /// ciphertexts alone.
    Tracking,
}

/// Outcome of one attack harness run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackVerdict {
    pub attack: AttackKind,
    /// Number of adversarial trials performed.
    pub attempts: u64,
    /// Trials where the adversary obtained an accept it should not have
    /// (for tracking: correct linkages, to be judged against chance).
    pub successes: u64,
    /// Harness-specific commentary: reject breakdowns, classifier
    /// accuracy, and similar diagnostics.
    pub detail: String,
}

impl AttackVerdict {
    /// True when the protocol resisted: no illegitimate accepts. Not
    /// meaningful for tracking, which is judged statistically against
    /// chance — see [`TrackingReport::judgement`].
    pub fn resisted(&self) -> bool {
        self.successes == 0
    }
}

// ---------------------------------------------------------------------------
// Shared laboratory

/// A server plus the rng streams an interactive harness needs.
struct Lab {
    server: AuthServer,
    rng_tag: ChaCha8Rng,
    rng_reader: ChaCha8Rng,
    rng_server: ChaCha8Rng,
    rng_adversary: ChaCha8Rng,
}

/// Everything captured from one legitimate session.
struct HonestSession {
    auth: crate::protocol::AuthRequest,
    cr: u32,
    b: SymCiphertext,
}

/// Sleep command carried by harness-issued finals, microseconds.
const LAB_TIME_US: u64 = 1_000_000;

impl Lab {
    /// Builds a server with `directory_size` enrolled identities and
    /// protocol instances for the first `live_tags` of them.
    fn new(seed: u64, directory_size: u64, live_tags: usize) -> (Lab, Vec<TagProtocol>) {
        let mut rng_server = stream(seed, StreamId::Server);
        let mut server = AuthServer::new(SizeProfile::default(), &mut rng_server);
        for serial in 0..directory_size {
            server.register(TagId::from_serial(serial));
        }
        let tags = (0..live_tags)
            .map(|serial| {
                TagProtocol::new(
                    TagId::from_serial(serial as u64),
                    server.public_key(),
                    server.profile(),
                )
            })
            .collect();
        let lab = Lab {
            server,
            rng_tag: stream(seed, StreamId::Tag),
            rng_reader: stream(seed, StreamId::Reader),
            rng_server,
            rng_adversary: stream(seed, StreamId::Adversary),
        };
        (lab, tags)
    }

    /// Runs a complete legitimate handshake and returns what an
    /// eavesdropper captured. Leaves the tag idle again.
    fn honest_session(&mut self, tag: &mut TagProtocol) -> HonestSession {
        tag.start_session(0, &mut self.rng_tag)
            .expect("idle tag joins");
        let rn16 = tag.rn16().expect("arbitrating");
        let cr = make_challenge(&self.server.profile(), &mut self.rng_reader);
        let auth = tag.on_ack(rn16, cr, &mut self.rng_tag).expect("own handle");
        tag.auth_sent();
        let req = ServerRequest {
            auth: auth.clone(),
            cr,
            time_estimate_us: LAB_TIME_US,
        };
        let resp = self
            .server
            .authenticate(&req, &mut self.rng_server)
            .expect("legitimate session verifies");
        match tag.on_final(&resp.b) {
            FinalOutcome::Accept { .. } => {}
            FinalOutcome::Reject(r) => panic!("legitimate final refused: {r:?}"),
        }
        tag.wake();
        HonestSession {
            auth,
            cr,
            b: resp.b,
        }
    }
}

fn reason_tally(tally: &mut [u64; 4], reason: RejectReason) {
    let ix = match reason {
        RejectReason::KemFailure => 0,
        RejectReason::SymFailure => 1,
        RejectReason::UnknownId => 2,
        RejectReason::ChallengeMismatch => 3,
    };
    tally[ix] += 1;
}

fn render_tally(tally: &[u64; 4]) -> String {
    format!(
        "kem {}, sym {}, unknown-id {}, challenge {}",
        tally[0], tally[1], tally[2], tally[3]
    )
}

// ---------------------------------------------------------------------------
// Replay

/// Replays each captured session three ways: the response pair to the
/// server under the next frame's challenge, the final message back to
/// the already-authenticated tag, and the final message into a fresh
/// session of the same tag.
pub fn replay_attack(seed: u64, rounds: u64) -> AttackVerdict {
    let (mut lab, mut tags) = Lab::new(seed, 100, 1);
    let tag = &mut tags[0];
    let mut successes = 0u64;
    let mut rejects = [0u64; 4];
    let mut tag_rejects = 0u64;

    for _ in 0..rounds {
        let captured = lab.honest_session(tag);

        // (1) Verbatim replay of R1 ‖ R2 inside a later frame: the reader
        // has drawn a fresh challenge, which cannot match the one sealed
        // inside R1.
        let mut cr_next = make_challenge(&lab.server.profile(), &mut lab.rng_reader);
        while cr_next == captured.cr {
            cr_next = make_challenge(&lab.server.profile(), &mut lab.rng_reader);
        }
        let req = ServerRequest {
            auth: captured.auth.clone(),
            cr: cr_next,
            time_estimate_us: LAB_TIME_US,
        };
        match lab.server.authenticate(&req, &mut lab.rng_server) {
            Ok(_) => successes += 1,
            Err(reason) => reason_tally(&mut rejects, reason),
        }

        // (2) The same final message delivered again: the tag has already
        // powered down and must not re-accept.
        if matches!(tag.on_final(&captured.b), FinalOutcome::Accept { .. }) {
            successes += 1;
        } else {
            tag_rejects += 1;
        }

        // (3) The stale final message answering a fresh session: the new
        // session key cannot decrypt it.
        tag.wake();
        tag.start_session(0, &mut lab.rng_tag).expect("idle");
        let rn16 = tag.rn16().expect("arbitrating");
        let cr = make_challenge(&lab.server.profile(), &mut lab.rng_reader);
        tag.on_ack(rn16, cr, &mut lab.rng_tag).expect("own handle");
        tag.auth_sent();
        if matches!(tag.on_final(&captured.b), FinalOutcome::Accept { .. }) {
            successes += 1;
        } else {
            tag_rejects += 1;
        }
        tag.reset();
    }

    AttackVerdict {
        attack: AttackKind::Replay,
        attempts: 3 * rounds,
        successes,
        detail: format!(
            "server rejects: {}; tag rejects: {tag_rejects}",
            render_tally(&rejects)
        ),
    }
}

// ---------------------------------------------------------------------------
// Resend

/// Resends captured material in later protocol runs: the response pair
/// under a fresh frame, a rogue reader reusing a captured challenge and
/// final against a second tag, and a revoked tag retrying legitimately.
pub fn resend_attack(seed: u64, rounds: u64) -> AttackVerdict {
    let (mut lab, mut tags) = Lab::new(seed, 100, 2);
    let mut successes = 0u64;
    let mut rejects = [0u64; 4];
    let mut tag_rejects = 0u64;

    for _ in 0..rounds {
        let captured = lab.honest_session(&mut tags[0]);

        // (1) Response pair resent in a later frame.
        let mut cr_next = make_challenge(&lab.server.profile(), &mut lab.rng_reader);
        while cr_next == captured.cr {
            cr_next = make_challenge(&lab.server.profile(), &mut lab.rng_reader);
        }
        let req = ServerRequest {
            auth: captured.auth.clone(),
            cr: cr_next,
            time_estimate_us: LAB_TIME_US,
        };
        match lab.server.authenticate(&req, &mut lab.rng_server) {
            Ok(_) => successes += 1,
            Err(reason) => reason_tally(&mut rejects, reason),
        }

        // (2) Rogue reader: acknowledge a different tag with the captured
        // challenge, then serve the captured final. The victim's fresh
        // session key rejects it.
        let victim = &mut tags[1];
        victim.start_session(0, &mut lab.rng_tag).expect("idle");
        let rn16 = victim.rn16().expect("arbitrating");
        victim
            .on_ack(rn16, captured.cr, &mut lab.rng_tag)
            .expect("own handle");
        victim.auth_sent();
        if matches!(victim.on_final(&captured.b), FinalOutcome::Accept { .. }) {
            successes += 1;
        } else {
            tag_rejects += 1;
        }
        victim.reset();

        // (3) Revocation: the same tag with sound cryptography but a
        // deleted directory entry.
        let id = tags[0].id();
        assert!(lab.server.deregister(id));
        let revoked = &mut tags[0];
        revoked.start_session(0, &mut lab.rng_tag).expect("idle");
        let rn16 = revoked.rn16().expect("arbitrating");
        let cr = make_challenge(&lab.server.profile(), &mut lab.rng_reader);
        let auth = revoked
            .on_ack(rn16, cr, &mut lab.rng_tag)
            .expect("own handle");
        revoked.auth_sent();
        let req = ServerRequest {
            auth,
            cr,
            time_estimate_us: LAB_TIME_US,
        };
        match lab.server.authenticate(&req, &mut lab.rng_server) {
            Ok(_) => successes += 1,
            Err(reason) => reason_tally(&mut rejects, reason),
        }
        revoked.reset();
        lab.server.register(id);
    }

    AttackVerdict {
        attack: AttackKind::Resend,
        attempts: 3 * rounds,
        successes,
        detail: format!(
            "server rejects: {}; tag rejects: {tag_rejects}",
            render_tally(&rejects)
        ),
    }
}

// ---------------------------------------------------------------------------
// Impersonation

/// Fabricated tags run the genuine protocol under freshly invented
/// identities against a large directory. Every run reaches the server
/// cryptographically intact and must die at the directory lookup.
pub fn impersonate_tag(seed: u64, attempts: u64, directory_size: u64) -> AttackVerdict {
    let (mut lab, _) = Lab::new(seed, directory_size, 0);
    let mut successes = 0u64;
    let mut rejects = [0u64; 4];

    for _ in 0..attempts {
        let mut fake = TagProtocol::new(
            TagId::random(&mut lab.rng_adversary),
            lab.server.public_key(),
            lab.server.profile(),
        );
        fake.start_session(0, &mut lab.rng_adversary).expect("idle");
        let rn16 = fake.rn16().expect("arbitrating");
        let cr = make_challenge(&lab.server.profile(), &mut lab.rng_reader);
        let auth = fake
            .on_ack(rn16, cr, &mut lab.rng_adversary)
            .expect("own handle");
        let req = ServerRequest {
            auth,
            cr,
            time_estimate_us: LAB_TIME_US,
        };
        match lab.server.authenticate(&req, &mut lab.rng_server) {
            Ok(_) => successes += 1,
            Err(reason) => reason_tally(&mut rejects, reason),
        }
    }

    AttackVerdict {
        attack: AttackKind::ImpersonateTag,
        attempts,
        successes,
        detail: format!(
            "directory size {directory_size}; rejects: {}",
            render_tally(&rejects)
        ),
    }
}

/// A rogue reader answers a real tag with finals it cannot legitimately
/// produce: fresh encryptions under its own key and a stale final
/// captured earlier. The tag must refuse every one.
pub fn impersonate_reader(seed: u64, rounds: u64) -> AttackVerdict {
    let (mut lab, mut tags) = Lab::new(seed, 10, 1);
    let tag = &mut tags[0];
    let stale = lab.honest_session(tag);
    let mut successes = 0u64;
    let mut tag_rejects = 0u64;

    for _ in 0..rounds {
        tag.start_session(0, &mut lab.rng_tag).expect("idle");
        let rn16 = tag.rn16().expect("arbitrating");
        let cr = make_challenge(&lab.server.profile(), &mut lab.rng_adversary);
        tag.on_ack(rn16, cr, &mut lab.rng_tag).expect("own handle");
        tag.auth_sent();

        // (1) A final forged under the adversary's own key, correctly
        // formatted but for the wrong session key.
        let forged_key = SymKey::generate(&mut lab.rng_adversary);
        let mut plain = vec![0u8; 16];
        lab.rng_adversary.fill_bytes(&mut plain);
        let forged = sym_encrypt(&forged_key, &plain, &mut lab.rng_adversary);
        if matches!(tag.on_final(&forged), FinalOutcome::Accept { .. }) {
            successes += 1;
        } else {
            tag_rejects += 1;
        }

        // (2) The stale final captured from an old session.
        if matches!(tag.on_final(&stale.b), FinalOutcome::Accept { .. }) {
            successes += 1;
        } else {
            tag_rejects += 1;
        }
        tag.reset();
    }

    AttackVerdict {
        attack: AttackKind::ImpersonateReader,
        attempts: 2 * rounds,
        successes,
        detail: format!("tag rejects: {tag_rejects}"),
    }
}

// ---------------------------------------------------------------------------
// Tracking

/// Whether the observed tags draw fresh randomness per session or are
/// stuck replaying one entropy pool — the failure mode the tracking
/// test must be able to detect.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RandomnessMode {
    /// Sound implementation: every session draws fresh key, nonce, IV,
    /// and encapsulation randomness.
    Fresh,
    /// Broken implementation: each tag restarts its generator every
    /// session, so per-tag randomness repeats verbatim.
    StuckPerTag,
}

/// Statistical judgement of the tracking classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrackingJudgement {
    /// Accuracy within three standard errors of chance.
    Indistinguishable,
    /// Accuracy outside the chance band: sessions are linkable.
    Distinguishable,
    /// Too few test samples for the band to mean anything.
    InsufficientData,
}

/// Everything the tracking harness measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingReport {
    pub verdict: AttackVerdict,
    pub judgement: TrackingJudgement,
    /// Fraction of held-out sessions attributed to the right tag.
    pub accuracy: f64,
    /// Binomial standard error of chance accuracy on the test set.
    pub sigma: f64,
    pub train_per_tag: usize,
    pub test_per_tag: usize,
    /// Whether every captured response pair was unique across both tags
    /// and phases (evidence of probabilistic encryption).
    pub all_ciphertexts_distinct: bool,
}

/// One eavesdropped session: the two ciphertexts kept separate (to test
/// that neither ever repeats) plus their concatenation (what the
/// classifier sees).
struct Capture {
    label: usize,
    r1: Vec<u8>,
    r2: Vec<u8>,
    all: Vec<u8>,
}

fn capture_response(
    label: usize,
    tag: &mut TagProtocol,
    tag_rng: &mut ChaCha8Rng,
    reader_rng: &mut ChaCha8Rng,
) -> Capture {
    tag.start_session(0, tag_rng).expect("idle");
    let rn16 = tag.rn16().expect("arbitrating");
    let cr = make_challenge(&SizeProfile::default(), reader_rng);
    let auth = tag.on_ack(rn16, cr, tag_rng).expect("own handle");
    tag.reset();
    let r1 = auth.r1.to_bytes();
    let r2 = auth.r2.to_bytes();
    let mut all = r1.clone();
    all.extend_from_slice(&r2);
    Capture {
        label,
        r1,
        r2,
        all,
    }
}

fn hamming_bytes(a: &[u8], b: &[u8]) -> u32 {
    a.iter().zip(b).map(|(x, y)| u32::from(x != y)).sum()
}

/// A passive observer watches two tags make repeated passes, then tries
/// to attribute held-out sessions using a nearest-neighbour classifier
/// over the raw response-pair bytes. Sound randomization must pin the
/// accuracy to chance; the stuck-generator mode must be caught.
pub fn tracking_distinguisher(
    seed: u64,
    train_per_tag: usize,
    test_per_tag: usize,
    mode: RandomnessMode,
) -> TrackingReport {
    let (lab, mut tags) = Lab::new(seed, 2, 2);
    let mut rng_reader = lab.rng_reader;
    let mut rng_fresh = lab.rng_tag;

    // In the broken mode each tag re-seeds from the same pool every
    // session; cloning its base generator reproduces that exactly.
    let stuck_base: Vec<ChaCha8Rng> = (0..2u64)
        .map(|i| stream(seed.wrapping_add(0xb05e).wrapping_add(i), StreamId::Tag))
        .collect();

    let capture = |tag_ix: usize,
                       tags: &mut Vec<TagProtocol>,
                       rng_reader: &mut ChaCha8Rng,
                       rng_fresh: &mut ChaCha8Rng|
     -> Capture {
        match mode {
            RandomnessMode::Fresh => {
                capture_response(tag_ix, &mut tags[tag_ix], rng_fresh, rng_reader)
            }
            RandomnessMode::StuckPerTag => {
                let mut rng = stuck_base[tag_ix].clone();
                capture_response(tag_ix, &mut tags[tag_ix], &mut rng, rng_reader)
            }
        }
    };

    let mut train: Vec<Capture> = Vec::new();
    let mut test: Vec<Capture> = Vec::new();
    for _ in 0..train_per_tag {
        for tag_ix in 0..2 {
            train.push(capture(tag_ix, &mut tags, &mut rng_reader, &mut rng_fresh));
        }
    }
    for _ in 0..test_per_tag {
        for tag_ix in 0..2 {
            test.push(capture(tag_ix, &mut tags, &mut rng_reader, &mut rng_fresh));
        }
    }

    // Probabilistic encryption means neither ciphertext ever repeats, even
    // for the same tag under the same challenge width.
    let mut seen: HashSet<&[u8]> = HashSet::new();
    let all_distinct = train
        .iter()
        .chain(&test)
        .flat_map(|c| [c.r1.as_slice(), c.r2.as_slice()])
        .all(|bytes| seen.insert(bytes));

    let mut correct = 0u64;
    for probe in &test {
        let guess = train
            .iter()
            .min_by_key(|t| hamming_bytes(&probe.all, &t.all))
            .map(|t| t.label)
            .expect("non-empty training set");
        if guess == probe.label {
            correct += 1;
        }
    }

    let attempts = test.len() as u64;
    let accuracy = correct as f64 / attempts.max(1) as f64;
    let sigma = 0.5 / (attempts.max(1) as f64).sqrt();
    let judgement = if test_per_tag < 100 {
        TrackingJudgement::InsufficientData
    } else if (accuracy - 0.5).abs() <= 3.0 * sigma {
        TrackingJudgement::Indistinguishable
    } else {
        TrackingJudgement::Distinguishable
    };

    TrackingReport {
        verdict: AttackVerdict {
            attack: AttackKind::Tracking,
            attempts,
            successes: correct,
            detail: format!(
                "accuracy {accuracy:.4} vs chance 0.5 ± {:.4} (3σ), mode {mode:?}, \
                 distinct ciphertexts: {all_distinct}",
                3.0 * sigma
            ),
        },
        judgement,
        accuracy,
        sigma,
        train_per_tag,
        test_per_tag,
        all_ciphertexts_distinct: all_distinct,
    }
}

/// Runs every harness at its standard scale. The tracking entry reports
/// the sound-randomness mode; its judgement is recomputed by callers
/// that need the statistical band rather than raw counts.
pub fn run_all(seed: u64) -> Vec<AttackVerdict> {
    vec![
        replay_attack(seed, 334),
        resend_attack(seed, 334),
        impersonate_tag(seed, 1_000, 10_000),
        impersonate_reader(seed, 500),
        tracking_distinguisher(seed, 250, 250, RandomnessMode::Fresh).verdict,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_never_succeeds() {
        let v = replay_attack(7, 50);
        assert_eq!(v.attempts, 150);
        assert_eq!(v.successes, 0, "{}", v.detail);
        assert!(v.detail.contains("challenge 50"), "{}", v.detail);
    }

    #[test]
    fn resend_never_succeeds_and_revocation_bites() {
        let v = resend_attack(11, 50);
        assert_eq!(v.attempts, 150);
        assert_eq!(v.successes, 0, "{}", v.detail);
        assert!(v.detail.contains("unknown-id 50"), "{}", v.detail);
    }

    #[test]
    fn fabricated_identities_die_at_the_directory() {
        let v = impersonate_tag(13, 100, 1_000);
        assert_eq!(v.attempts, 100);
        assert_eq!(v.successes, 0, "{}", v.detail);
        assert!(v.detail.contains("unknown-id 100"), "{}", v.detail);
    }

    #[test]
    fn rogue_reader_finals_are_refused() {
        let v = impersonate_reader(17, 100);
        assert_eq!(v.attempts, 200);
        assert_eq!(v.successes, 0, "{}", v.detail);
    }

    #[test]
    fn sound_randomness_is_untrackable_and_stuck_randomness_is_not() {
        let sound = tracking_distinguisher(19, 120, 120, RandomnessMode::Fresh);
        assert_eq!(sound.judgement, TrackingJudgement::Indistinguishable, "{:?}", sound);
        assert!(sound.all_ciphertexts_distinct);

        let broken = tracking_distinguisher(19, 120, 120, RandomnessMode::StuckPerTag);
        assert_eq!(broken.judgement, TrackingJudgement::Distinguishable, "{:?}", broken);
        assert!(!broken.all_ciphertexts_distinct);
        assert!(broken.accuracy > 0.95, "accuracy {}", broken.accuracy);
    }

    #[test]
    fn small_test_sets_are_not_judged() {
        let r = tracking_distinguisher(23, 20, 20, RandomnessMode::Fresh);
        assert_eq!(r.judgement, TrackingJudgement::InsufficientData);
    }
}
