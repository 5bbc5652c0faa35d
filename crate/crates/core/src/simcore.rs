//! Discrete-event simulation of one reader site: vehicles stream through
//! coverage, the reader arbitrates and authenticates their tags against
//! the backend, and authenticated tags power down.
//!
//! One run is strictly single-threaded and consumes six independent
//! random streams (traffic, tag, reader, server, radio, adversary), so
//! toggling one subsystem — say sleep scheduling — never perturbs the
//! vehicle stream it is compared against. Every quantity of interest is
//! accumulated during the sweep of a binary heap of timestamped events;
//! equal timestamps resolve in scheduling order.
//!
//! Timing model per arbitration slot, with `ta` the link turnaround:
//! an idle slot costs half a reply window (`(rn16 + ta) / 2`), a
//! collision a full one (`rn16 + ta`), and a singulated slot extends
//! through the whole authentication exchange — four more transmissions,
//! three turnarounds, and one server round trip (twice the one-way
//! delay). The reader scans continuously while frames contain replies
//! and otherwise re-queries every `reader_scan_period_s`.

use std::collections::BinaryHeap;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anticollision::{classify_slot, FrameState, SlotDecision, SlotOutcome};
use crate::config::{ProtocolProfile, Scenario, SleepStrategy};
use crate::crypto::{SymCiphertext, KEM_NAME, SYM_CIPHER_NAME};
use crate::metrics::{
    MetricsReport, RejectTotals, RunLabel, SlotTotals, StatSummary, TagCensus,
};
use crate::protocol::{
    make_challenge, AuthRequest, AuthServer, FinalOutcome, RejectReason, ServerRequest, TagId,
    TagPhase, TagProtocol, TagRejectReason, WireMessage,
};
use crate::radio::LinkDirection;
use crate::rng::{stream, StreamId};
use crate::traffic::{coverage_interval, position_at, spawn_stream, Vehicle};

/// Ceiling on the sleep interval a reader will command, seconds.
const MAX_SLEEP_S: f64 = 86_400.0;

/// What to capture beyond the metrics report.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Record a line per engine event (for determinism checks and
    /// debugging).
    pub capture_trace: bool,
    /// Record per-session air-interface transcripts (the adversary's
    /// eavesdropping feed).
    pub capture_transcripts: bool,
}

/// One engine event, rendered, for trace comparison.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceEvent {
    /// Event time in integer nanoseconds, so trace comparison is exact.
    pub t_ns: u64,
    pub what: String,
}

/// Who transmitted an air-interface frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    TagToReader,
    ReaderToTag,
}

/// One captured air-interface frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub time_s: f64,
    pub direction: Direction,
    pub message: WireMessage,
}

/// How a singulated session ended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SessionOutcome {
    /// The tag verified the final message and powered down.
    Accepted { latency_s: f64, sleep_s: f64 },
    /// The server refused the forwarded credentials.
    ServerRejected(RejectReason),
    /// The tag refused the final message.
    TagRejected(TagRejectReason),
    /// The acknowledgement never reached the tag.
    AckLost,
    /// The tag's encrypted response never reached the reader.
    AuthLost,
    /// The final message never reached the tag.
    FinalLost,
    /// The run ended mid-session.
    Unfinished,
}

/// Everything an eavesdropper sees of one singulated session, plus
/// ground truth for judging attack harnesses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTranscript {
    pub session_id: u64,
    /// Roster index of the transmitting tag (ground truth, not visible
    /// on the air).
    pub tag: usize,
    /// Whether the tag was an adversarial responder.
    pub adversarial: bool,
    pub messages: Vec<TranscriptEntry>,
    pub outcome: SessionOutcome,
}

/// A run's full product: the report plus any captures requested.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub trace: Vec<TraceEvent>,
    pub transcripts: Vec<SessionTranscript>,
}

/// Runs a scenario and returns its metrics report.
pub fn run(scenario: &Scenario) -> MetricsReport {
    run_full(scenario, RunOptions::default()).report
}

/// Runs a scenario with optional trace and transcript capture.
pub fn run_full(scenario: &Scenario, opts: RunOptions) -> RunOutput {
    Sim::new(scenario, opts).execute()
}

// ---------------------------------------------------------------------------
// Engine internals

#[derive(Debug, Clone)]
enum Ev {
    /// The idle reader's next scheduled scan.
    ReaderWake,
    /// The opening query finished transmitting; idle tags have drawn
    /// slots.
    QueryEnd,
    /// The reader starts listening on the next arbitration slot.
    SlotStart,
    /// A lone tag's handle finished transmitting (singulation).
    RnDone { tag: usize },
    /// The acknowledgement + challenge finished transmitting.
    AckDone { tag: usize },
    /// The window for the tag's encrypted response closed.
    AuthDone { tag: usize },
    /// The server round trip elapsed; `b` carries the final message
    /// unless the server rejected.
    FinalDone { tag: usize, b: Option<SymCiphertext> },
    /// A fixed-occupancy read under the timing-reference profile ended.
    BaselineDone { tag: usize },
    /// A sleeping tag powers its receiver up for a wake-check.
    CheckStart { tag: usize },
    /// The wake-check listen window closed.
    CheckEnd { tag: usize },
    /// End of the simulated horizon.
    End,
}

#[derive(Debug)]
struct QueuedEvent {
    t: f64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for QueuedEvent {
    fn eq(&self, other: &Self) -> bool {
        self.t == other.t && self.seq == other.seq
    }
}
impl Eq for QueuedEvent {}
impl PartialOrd for QueuedEvent {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for QueuedEvent {
    // Reversed: BinaryHeap is a max-heap and we pop earliest-first, with
    // scheduling order breaking timestamp ties.
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other
            .t
            .total_cmp(&self.t)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct TagSim {
    protocol: TagProtocol,
    vehicle: Option<Vehicle>,
    flooder: bool,
    enter_t: f64,
    exit_t: f64,
    awake: bool,
    sleep_until: f64,
    session_started_at: f64,
    authed_at: Option<f64>,
    last_accrual_t: f64,
    in_range_s: f64,
    awake_in_range_s: f64,
}

impl TagSim {
    fn in_coverage(&self, t: f64) -> bool {
        t >= self.enter_t && t <= self.exit_t
    }

    /// Charges the elapsed interval against the in-coverage and awake
    /// ledgers. Must run before every awake-state flip.
    fn accrue(&mut self, t: f64) {
        let lo = self.last_accrual_t.max(self.enter_t);
        let hi = t.min(self.exit_t);
        if hi > lo {
            self.in_range_s += hi - lo;
            if self.awake {
                self.awake_in_range_s += hi - lo;
            }
        }
        self.last_accrual_t = t;
    }

    fn set_awake(&mut self, t: f64, awake: bool) {
        self.accrue(t);
        self.awake = awake;
    }
}

/// The session the reader is currently serving.
struct Service {
    tag: usize,
    rn16: u16,
    cr: Option<u32>,
    auth: Option<AuthRequest>,
    transcript: Option<usize>,
}

struct Sim<'a> {
    sc: &'a Scenario,
    opts: RunOptions,

    queue: BinaryHeap<QueuedEvent>,
    seq: u64,

    tags: Vec<TagSim>,
    /// Tag indices in coverage-entry order; `next_entrant` marks how far
    /// the run has admitted into `alive`.
    by_enter: Vec<usize>,
    next_entrant: usize,
    alive: Vec<usize>,

    server: AuthServer,
    frame: FrameState,
    frame_started_at: f64,
    frame_had_reply: bool,
    service: Option<Service>,

    reader_awake: bool,
    reader_last_toggle: f64,
    reader_awake_s: f64,

    rng_tag: ChaCha8Rng,
    rng_reader: ChaCha8Rng,
    rng_server: ChaCha8Rng,
    rng_radio: ChaCha8Rng,

    slots: SlotTotals,
    rejects: RejectTotals,
    false_accepts: u64,
    latency_samples_s: Vec<f64>,
    session_counter: u64,

    trace: Vec<TraceEvent>,
    transcripts: Vec<SessionTranscript>,

    // Precomputed transmission durations, seconds.
    query_tx: f64,
    rn16_tx: f64,
    ack_tx: f64,
    auth_tx: f64,
    b_tx: f64,
    idle_slot: f64,
    collision_slot: f64,
    ta: f64,
}

impl<'a> Sim<'a> {
    fn new(sc: &'a Scenario, opts: RunOptions) -> Self {
        let mut rng_traffic = stream(sc.seed, StreamId::Traffic);
        let mut rng_server = stream(sc.seed, StreamId::Server);
        let mut rng_adversary = stream(sc.seed, StreamId::Adversary);

        let mut server = AuthServer::new(sc.profile, &mut rng_server);

        let vehicles = spawn_stream(&sc.traffic, sc.duration_s, &mut rng_traffic);
        let mut tags = Vec::with_capacity(vehicles.len() + sc.dos_responders as usize);
        for v in vehicles {
            // Vehicles whose lane never crosses coverage (possible only
            // with custom geometry) carry no observable tag.
            let Some((enter_t, exit_t)) =
                coverage_interval(&v, &sc.geometry, sc.traffic.lanes, sc.radio.coverage_radius_m)
            else {
                continue;
            };
            let id = TagId::from_serial(tags.len() as u64);
            server.register(id);
            tags.push(TagSim {
                protocol: TagProtocol::new(id, server.public_key(), sc.profile),
                vehicle: Some(v),
                flooder: false,
                enter_t,
                exit_t,
                awake: true,
                sleep_until: 0.0,
                session_started_at: 0.0,
                authed_at: None,
                last_accrual_t: 0.0,
                in_range_s: 0.0,
                awake_in_range_s: 0.0,
            });
        }
        for _ in 0..sc.dos_responders {
            // Adversarial responders sit at the reader for the whole run,
            // answering every query with an unregistered identity.
            tags.push(TagSim {
                protocol: TagProtocol::new(
                    TagId::random(&mut rng_adversary),
                    server.public_key(),
                    sc.profile,
                ),
                vehicle: None,
                flooder: true,
                enter_t: 0.0,
                exit_t: f64::INFINITY,
                awake: true,
                sleep_until: 0.0,
                session_started_at: 0.0,
                authed_at: None,
                last_accrual_t: 0.0,
                in_range_s: 0.0,
                awake_in_range_s: 0.0,
            });
        }

        let mut by_enter: Vec<usize> = (0..tags.len()).collect();
        by_enter.sort_by(|&a, &b| {
            tags[a]
                .enter_t
                .total_cmp(&tags[b].enter_t)
                .then_with(|| a.cmp(&b))
        });

        let tx = |bits: usize| sc.radio.tx_duration(bits);
        let ta = sc.slot_turnaround_s;
        let rn16_tx = tx(sc.profile.rn16_bits());

        Sim {
            sc,
            opts,
            queue: BinaryHeap::new(),
            seq: 0,
            tags,
            by_enter,
            next_entrant: 0,
            alive: Vec::new(),
            server,
            frame: FrameState::new(sc.q_initial),
            frame_started_at: 0.0,
            frame_had_reply: false,
            service: None,
            reader_awake: true,
            reader_last_toggle: 0.0,
            reader_awake_s: 0.0,
            rng_tag: stream(sc.seed, StreamId::Tag),
            rng_reader: stream(sc.seed, StreamId::Reader),
            rng_server,
            rng_radio: stream(sc.seed, StreamId::Radio),
            slots: SlotTotals::default(),
            rejects: RejectTotals::default(),
            false_accepts: 0,
            latency_samples_s: Vec::new(),
            session_counter: 0,
            trace: Vec::new(),
            transcripts: Vec::new(),
            query_tx: tx(sc.profile.query_bits()),
            rn16_tx,
            ack_tx: tx(sc.profile.ack_bits()),
            auth_tx: tx(sc.profile.auth_bits()),
            b_tx: tx(sc.profile.final_bits()),
            idle_slot: (rn16_tx + ta) / 2.0,
            collision_slot: rn16_tx + ta,
            ta,
        }
    }

    fn schedule(&mut self, t: f64, ev: Ev) {
        self.seq += 1;
        self.queue.push(QueuedEvent { t, seq: self.seq, ev });
    }

    fn note(&mut self, t: f64, what: impl FnOnce() -> String) {
        if self.opts.capture_trace {
            self.trace.push(TraceEvent {
                t_ns: (t * 1e9).round() as u64,
                what: what(),
            });
        }
    }

    fn reader_set_awake(&mut self, t: f64, awake: bool) {
        if self.reader_awake {
            self.reader_awake_s += t - self.reader_last_toggle;
        }
        self.reader_last_toggle = t;
        self.reader_awake = awake;
    }

    /// True when a frame crosses the link right now. Geometry gating is
    /// the caller's job; this adds the per-frame shadowing draw when the
    /// stochastic channel is enabled.
    fn link_ok(&mut self, tag: usize, t: f64, direction: LinkDirection) -> bool {
        if !self.sc.radio.shadowing_enabled {
            return true;
        }
        let distance = match &self.tags[tag].vehicle {
            Some(v) => {
                let (x, y) = position_at(v, &self.sc.geometry, self.sc.traffic.lanes, t);
                x.hypot(y)
            }
            None => 0.0,
        };
        self.sc
            .radio
            .link_success(distance, direction, &mut self.rng_radio)
    }

    fn execute(mut self) -> RunOutput {
        self.schedule(self.sc.duration_s, Ev::End);
        self.begin_frame(0.0);

        while let Some(event) = self.queue.pop() {
            let t = event.t;
            match event.ev {
                Ev::ReaderWake => self.begin_frame(t),
                Ev::QueryEnd => self.on_query_end(t),
                Ev::SlotStart => self.on_slot_start(t),
                Ev::RnDone { tag } => self.on_rn_done(t, tag),
                Ev::AckDone { tag } => self.on_ack_done(t, tag),
                Ev::AuthDone { tag } => self.on_auth_done(t, tag),
                Ev::FinalDone { tag, b } => self.on_final_done(t, tag, b),
                Ev::BaselineDone { tag } => self.on_baseline_done(t, tag),
                Ev::CheckStart { tag } => self.on_check_start(t, tag),
                Ev::CheckEnd { tag } => self.on_check_end(t, tag),
                Ev::End => {
                    for tag in &mut self.tags {
                        tag.accrue(t);
                    }
                    if self.reader_awake {
                        self.reader_awake_s += t - self.reader_last_toggle;
                        self.reader_last_toggle = t;
                    }
                    break;
                }
            }
        }

        self.build_output()
    }

    // -- reader frame machinery ---------------------------------------

    fn begin_frame(&mut self, t: f64) {
        self.reader_set_awake(t, true);
        self.frame_started_at = t;
        self.frame_had_reply = false;
        let q = self.frame.q();
        self.note(t, || format!("query q={q}"));
        self.schedule(t + self.query_tx, Ev::QueryEnd);
    }

    fn on_query_end(&mut self, t: f64) {
        // Admit tags that have reached coverage; drop tags gone for good.
        while self.next_entrant < self.by_enter.len() {
            let i = self.by_enter[self.next_entrant];
            if self.tags[i].enter_t > t {
                break;
            }
            self.alive.push(i);
            self.next_entrant += 1;
        }
        let tags = &self.tags;
        self.alive.retain(|&i| tags[i].exit_t >= t);

        let q = self.frame.q();
        for k in 0..self.alive.len() {
            let i = self.alive[k];
            if !self.tags[i].in_coverage(t) || !self.tags[i].awake {
                continue;
            }
            if !self.link_ok(i, t, LinkDirection::ReaderToTag) {
                continue;
            }
            if self.tags[i].protocol.start_session(q, &mut self.rng_tag).is_some() {
                self.tags[i].session_started_at = t;
            }
        }
        self.schedule(t, Ev::SlotStart);
    }

    fn on_slot_start(&mut self, t: f64) {
        let slot = self.frame.slot();
        let mut responders: Vec<usize> = Vec::new();
        for k in 0..self.alive.len() {
            let i = self.alive[k];
            let tag = &self.tags[i];
            if !tag.in_coverage(t) || !tag.awake {
                continue;
            }
            if tag.protocol.phase() != TagPhase::Arbitrating {
                continue;
            }
            match tag.protocol.session() {
                Some(s) if s.slot == slot => {}
                _ => continue,
            }
            if !self.link_ok(i, t, LinkDirection::TagToReader) {
                continue;
            }
            responders.push(i);
        }

        match classify_slot(responders.len()) {
            SlotOutcome::Idle => {
                self.slots.idle += 1;
                self.note(t, || format!("slot {slot} idle"));
                let decision = self.frame.record_slot(SlotOutcome::Idle, self.sc.q_step);
                self.decide(decision, t + self.idle_slot);
            }
            SlotOutcome::Success => {
                self.slots.success += 1;
                self.frame_had_reply = true;
                let i = responders[0];
                self.note(t, || format!("slot {slot} singulated tag={i}"));
                let rn16 = self.tags[i].protocol.rn16().expect("arbitrating tag has a handle");
                self.service = Some(Service {
                    tag: i,
                    rn16,
                    cr: None,
                    auth: None,
                    transcript: None,
                });
                match self.sc.protocol_profile {
                    ProtocolProfile::Hybrid => {
                        self.schedule(t + self.rn16_tx, Ev::RnDone { tag: i });
                    }
                    ProtocolProfile::BaselineTiming => {
                        self.schedule(t + self.sc.baseline_read_s, Ev::BaselineDone { tag: i });
                    }
                }
            }
            SlotOutcome::Collision => {
                self.slots.collision += 1;
                self.frame_had_reply = true;
                self.note(t, || format!("slot {slot} collision x{}", responders.len()));
                for &i in &responders {
                    self.tags[i].protocol.reset();
                }
                let decision = self.frame.record_slot(SlotOutcome::Collision, self.sc.q_step);
                self.decide(decision, t + self.collision_slot);
            }
        }
    }

    /// Applies a frame decision at the moment the current slot ends.
    fn decide(&mut self, decision: SlotDecision, at: f64) {
        match decision {
            SlotDecision::Continue => self.schedule(at, Ev::SlotStart),
            SlotDecision::Restart => {
                self.reset_orphans();
                self.begin_frame(at);
            }
            SlotDecision::FrameComplete => {
                self.reset_orphans();
                if self.frame_had_reply {
                    self.begin_frame(at);
                } else {
                    let next_scan = self.frame_started_at + self.sc.reader_scan_period_s;
                    if next_scan <= at {
                        self.begin_frame(at);
                    } else {
                        self.note(at, || "reader idle".to_owned());
                        self.reader_set_awake(at, false);
                        self.schedule(next_scan, Ev::ReaderWake);
                    }
                }
            }
        }
    }

    /// Tags abandoned mid-arbitration or mid-handshake re-draw at the
    /// next query.
    fn reset_orphans(&mut self) {
        for k in 0..self.alive.len() {
            let i = self.alive[k];
            match self.tags[i].protocol.phase() {
                TagPhase::Arbitrating | TagPhase::Acknowledged | TagPhase::AwaitingFinal => {
                    self.tags[i].protocol.reset();
                }
                TagPhase::Idle | TagPhase::Sleeping => {}
            }
        }
    }

    /// The singulated slot ends: settle the frame state and queue the
    /// next slot after one turnaround.
    fn end_service(&mut self, t: f64) {
        self.service = None;
        let decision = self.frame.record_slot(SlotOutcome::Success, self.sc.q_step);
        self.decide(decision, t + self.ta);
    }

    // -- authentication service chain ----------------------------------

    fn service_for(&self, tag: usize) -> bool {
        matches!(&self.service, Some(sv) if sv.tag == tag)
    }

    fn on_rn_done(&mut self, t: f64, tag: usize) {
        if !self.service_for(tag) {
            return;
        }
        let cr = make_challenge(&self.sc.profile, &mut self.rng_reader);
        let session_id = self.session_counter;
        self.session_counter += 1;
        let rn16 = self.service.as_ref().expect("guarded").rn16;
        if self.opts.capture_transcripts {
            self.transcripts.push(SessionTranscript {
                session_id,
                tag,
                adversarial: self.tags[tag].flooder,
                messages: vec![TranscriptEntry {
                    time_s: t,
                    direction: Direction::TagToReader,
                    message: WireMessage::Rn16 { value: rn16 },
                }],
                outcome: SessionOutcome::Unfinished,
            });
            let ix = self.transcripts.len() - 1;
            self.service.as_mut().expect("guarded").transcript = Some(ix);
        }
        self.service.as_mut().expect("guarded").cr = Some(cr);
        self.schedule(t + self.ta + self.ack_tx, Ev::AckDone { tag });
    }

    fn transcript_push(&mut self, t: f64, direction: Direction, message: WireMessage) {
        if let Some(ix) = self.service.as_ref().and_then(|sv| sv.transcript) {
            self.transcripts[ix].messages.push(TranscriptEntry {
                time_s: t,
                direction,
                message,
            });
        }
    }

    fn transcript_close(&mut self, outcome: SessionOutcome) {
        if let Some(ix) = self.service.as_ref().and_then(|sv| sv.transcript) {
            self.transcripts[ix].outcome = outcome;
        }
    }

    fn on_ack_done(&mut self, t: f64, tag: usize) {
        if !self.service_for(tag) {
            return;
        }
        let (rn16, cr) = {
            let sv = self.service.as_ref().expect("guarded");
            (sv.rn16, sv.cr.expect("challenge drawn at singulation"))
        };
        self.transcript_push(
            t,
            Direction::ReaderToTag,
            WireMessage::AckChallenge { rn16, cr },
        );
        let delivered = self.tags[tag].in_coverage(t)
            && self.tags[tag].awake
            && self.link_ok(tag, t, LinkDirection::ReaderToTag);
        if delivered {
            if let Some(auth) = self.tags[tag].protocol.on_ack(rn16, cr, &mut self.rng_tag) {
                // The tag transmits its response regardless of what the
                // reader ends up receiving.
                self.tags[tag].protocol.auth_sent();
                self.service.as_mut().expect("guarded").auth = Some(auth);
            }
        }
        self.schedule(t + self.ta + self.auth_tx, Ev::AuthDone { tag });
    }

    fn on_auth_done(&mut self, t: f64, tag: usize) {
        if !self.service_for(tag) {
            return;
        }
        let auth = self.service.as_mut().expect("guarded").auth.take();
        let received = auth.is_some()
            && self.tags[tag].in_coverage(t)
            && self.link_ok(tag, t, LinkDirection::TagToReader);
        if !received {
            let outcome = if auth.is_some() {
                SessionOutcome::AuthLost
            } else {
                SessionOutcome::AckLost
            };
            self.transcript_close(outcome);
            self.note(t, || "service aborted on air".to_owned());
            self.end_service(t);
            return;
        }
        let auth = auth.expect("checked above");
        self.transcript_push(t, Direction::TagToReader, WireMessage::AuthRequest(auth.clone()));

        let remaining_s = match self.sc.sleep_strategy {
            SleepStrategy::RemainingRange => {
                (self.tags[tag].exit_t - t).max(0.0).min(MAX_SLEEP_S)
            }
            SleepStrategy::Fixed(d) => d.min(MAX_SLEEP_S),
        };
        let req = ServerRequest {
            auth,
            cr: self.service.as_ref().expect("guarded").cr.expect("set"),
            time_estimate_us: (remaining_s * 1e6).round() as u64,
        };
        let round_trip = 2.0 * self.sc.server_delay_s;
        match self.server.authenticate(&req, &mut self.rng_server) {
            Ok(resp) => {
                self.note(t, || format!("server accepted tag={tag}"));
                self.schedule(
                    t + round_trip + self.ta + self.b_tx,
                    Ev::FinalDone { tag, b: Some(resp.b) },
                );
            }
            Err(reason) => {
                match reason {
                    RejectReason::KemFailure => self.rejects.kem_failure += 1,
                    RejectReason::SymFailure => self.rejects.sym_failure += 1,
                    RejectReason::UnknownId => self.rejects.unknown_id += 1,
                    RejectReason::ChallengeMismatch => self.rejects.challenge_mismatch += 1,
                }
                self.note(t, || format!("server rejected tag={tag}: {reason}"));
                self.transcript_close(SessionOutcome::ServerRejected(reason));
                self.schedule(t + round_trip, Ev::FinalDone { tag, b: None });
            }
        }
    }

    fn on_final_done(&mut self, t: f64, tag: usize, b: Option<SymCiphertext>) {
        if !self.service_for(tag) {
            return;
        }
        if let Some(b) = b {
            self.transcript_push(t, Direction::ReaderToTag, WireMessage::Final { b: b.clone() });
            let delivered = self.tags[tag].in_coverage(t)
                && self.tags[tag].awake
                && self.link_ok(tag, t, LinkDirection::ReaderToTag);
            if delivered {
                match self.tags[tag].protocol.on_final(&b) {
                    FinalOutcome::Accept { sleep_s } => {
                        let latency_s = t - self.tags[tag].session_started_at;
                        if self.tags[tag].flooder {
                            self.false_accepts += 1;
                        } else if self.tags[tag].authed_at.is_none() {
                            self.tags[tag].authed_at = Some(t);
                            if self.tags[tag].session_started_at >= self.sc.warmup_s {
                                self.latency_samples_s.push(latency_s);
                            }
                        }
                        self.note(t, || {
                            format!("tag={tag} accepted, sleep {sleep_s:.3} s")
                        });
                        self.transcript_close(SessionOutcome::Accepted { latency_s, sleep_s });
                        if self.sc.sleep_enabled {
                            self.put_to_sleep(tag, t, sleep_s);
                        } else {
                            self.tags[tag].protocol.wake();
                        }
                    }
                    FinalOutcome::Reject(reason) => {
                        self.note(t, || format!("tag={tag} refused final: {reason:?}"));
                        self.transcript_close(SessionOutcome::TagRejected(reason));
                    }
                }
            } else {
                self.transcript_close(SessionOutcome::FinalLost);
            }
        }
        self.end_service(t);
    }

    fn on_baseline_done(&mut self, t: f64, tag: usize) {
        if !self.service_for(tag) {
            return;
        }
        if self.tags[tag].in_coverage(t) {
            if self.tags[tag].authed_at.is_none() && !self.tags[tag].flooder {
                self.tags[tag].authed_at = Some(t);
                if self.tags[tag].session_started_at >= self.sc.warmup_s {
                    self.latency_samples_s
                        .push(t - self.tags[tag].session_started_at);
                }
            }
            self.tags[tag].protocol.sleep();
            if self.sc.sleep_enabled {
                let remaining_s = match self.sc.sleep_strategy {
                    SleepStrategy::RemainingRange => {
                        (self.tags[tag].exit_t - t).max(0.0).min(MAX_SLEEP_S)
                    }
                    SleepStrategy::Fixed(d) => d.min(MAX_SLEEP_S),
                };
                self.put_to_sleep(tag, t, remaining_s);
            } else {
                self.tags[tag].protocol.wake();
            }
        }
        self.end_service(t);
    }

    // -- tag sleep scheduling -------------------------------------------

    fn put_to_sleep(&mut self, tag: usize, t: f64, sleep_s: f64) {
        if sleep_s <= 0.0 {
            self.tags[tag].protocol.wake();
            return;
        }
        self.tags[tag].sleep_until = t + sleep_s;
        self.tags[tag].set_awake(t, false);
        let first_check = (t + self.sc.sleep_check_period_s).min(self.tags[tag].sleep_until);
        self.schedule(first_check, Ev::CheckStart { tag });
    }

    fn on_check_start(&mut self, t: f64, tag: usize) {
        if self.tags[tag].protocol.phase() != TagPhase::Sleeping {
            return;
        }
        self.tags[tag].set_awake(t, true);
        if t >= self.tags[tag].sleep_until {
            self.tags[tag].protocol.wake();
            self.note(t, || format!("tag={tag} woke"));
            return;
        }
        let check_end = (t + self.sc.sleep_check_duration_s).min(self.tags[tag].sleep_until);
        self.schedule(check_end, Ev::CheckEnd { tag });
    }

    fn on_check_end(&mut self, t: f64, tag: usize) {
        if self.tags[tag].protocol.phase() != TagPhase::Sleeping {
            return;
        }
        if t >= self.tags[tag].sleep_until {
            self.tags[tag].protocol.wake();
            self.note(t, || format!("tag={tag} woke"));
            return;
        }
        self.tags[tag].set_awake(t, false);
        let next_check = (t + self.sc.sleep_check_period_s).min(self.tags[tag].sleep_until);
        self.schedule(next_check, Ev::CheckStart { tag });
    }

    // -- reporting -------------------------------------------------------

    fn build_output(self) -> RunOutput {
        let sc = self.sc;
        let mut census = TagCensus::default();
        let mut dwell = Vec::new();
        let mut awake_fracs = Vec::new();
        let mut energies_mj = Vec::new();
        let mut awake_s_total = 0.0;
        let mut in_range_s_total = 0.0;

        for tag in self.tags.iter().filter(|tag| !tag.flooder) {
            census.spawned += 1;
            if tag.authed_at.is_some() {
                census.authenticated += 1;
            } else if tag.exit_t <= sc.duration_s {
                census.missed += 1;
            } else {
                census.in_progress += 1;
            }
            let completed = tag.enter_t >= sc.warmup_s && tag.exit_t <= sc.duration_s;
            if completed {
                census.completed += 1;
                if tag.authed_at.is_some() {
                    census.authenticated_completed += 1;
                }
                dwell.push(tag.exit_t - tag.enter_t);
                if tag.in_range_s > 0.0 {
                    awake_fracs.push(tag.awake_in_range_s / tag.in_range_s);
                }
                energies_mj.push(tag.awake_in_range_s * sc.radio.tag_power_w * 1e3);
                awake_s_total += tag.awake_in_range_s;
                in_range_s_total += tag.in_range_s;
            }
        }

        let mean = |v: &[f64]| {
            if v.is_empty() {
                None
            } else {
                Some(v.iter().sum::<f64>() / v.len() as f64)
            }
        };
        let latency_ms: Vec<f64> = self.latency_samples_s.iter().map(|s| s * 1e3).collect();

        let report = MetricsReport {
            label: RunLabel::of(sc),
            census,
            read_ratio: if census.completed > 0 {
                Some(census.authenticated_completed as f64 / census.completed as f64)
            } else {
                None
            },
            latency_ms: StatSummary::from_samples(&latency_ms),
            dwell_s: StatSummary::from_samples(&dwell),
            awake_fraction: mean(&awake_fracs),
            energy_mj: mean(&energies_mj),
            awake_s_total,
            in_range_s_total,
            slots: self.slots,
            reader_awake_fraction: self.reader_awake_s / sc.duration_s,
            server_ops: self.server.op_counts(),
            rejects: self.rejects,
            false_accepts: self.false_accepts,
            sym_cipher: SYM_CIPHER_NAME.to_owned(),
            kem_scheme: KEM_NAME.to_owned(),
            attack_verdicts: None,
        };

        RunOutput {
            report,
            trace: self.trace,
            transcripts: self.transcripts,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ScenarioConfig, TrafficSelector};
    use crate::traffic::{TrafficClass, TrafficModel};

    fn scenario(edit: impl FnOnce(&mut ScenarioConfig)) -> Scenario {
        let mut config = ScenarioConfig::default();
        edit(&mut config);
        config.resolve().unwrap()
    }

    /// One slow vehicle, generous bandwidth, no server delay: the read
    /// must land in the advertised latency band, and with an already
    /// settled frame exponent it is a deterministic sum of transmission
    /// times and turnarounds.
    #[test]
    fn single_vehicle_latency_matches_air_time_sum() {
        let s = scenario(|c| {
            c.traffic = TrafficSelector::Custom(TrafficModel {
                speed_range_mps: (1.5, 1.5),
                headway_range_s: (1_000.0, 1_000.0),
                lanes: 1,
            });
            c.bandwidth_bps = Some(1_000_000.0);
            c.duration_s = 30.0;
            c.warmup_s = 0.0;
        });
        let report = run(&s);
        assert_eq!(report.census.spawned, 1);
        assert_eq!(report.census.authenticated, 1);
        let lat = report.latency_ms.expect("one read");
        assert_eq!(lat.count, 1);
        // 16 + 50 + 872 + 384 bits at 1 Mb/s plus three 62.5 µs
        // turnarounds = 1.5095 ms.
        assert!((lat.mean - 1.5095).abs() < 1e-9, "latency {} ms", lat.mean);
    }

    #[test]
    fn server_delay_adds_exactly_one_round_trip() {
        let build = |delay_s: f64| {
            scenario(|c| {
                c.traffic = TrafficSelector::Custom(TrafficModel {
                    speed_range_mps: (1.5, 1.5),
                    headway_range_s: (1_000.0, 1_000.0),
                    lanes: 1,
                });
                c.bandwidth_bps = Some(1_000_000.0);
                c.duration_s = 30.0;
                c.warmup_s = 0.0;
                c.server_delay_s = delay_s;
            })
        };
        let base = run(&build(0.0)).latency_ms.unwrap().mean;
        let delayed = run(&build(10e-3)).latency_ms.unwrap().mean;
        assert!((delayed - base - 20.0).abs() < 1e-9, "{base} vs {delayed}");
    }

    #[test]
    fn census_buckets_are_disjoint_and_exhaustive() {
        let s = scenario(|c| c.duration_s = 30.0);
        let report = run(&s);
        let c = report.census;
        assert!(c.spawned > 100);
        assert_eq!(c.spawned, c.authenticated + c.missed + c.in_progress);
        assert!(c.completed <= c.spawned);
        assert!(report.read_ratio.is_some());
        assert!(report.read_ratio.unwrap() > 0.9);
        assert_eq!(report.false_accepts, 0);
        let slots = report.slots;
        assert!(slots.success >= u64::from(c.authenticated));
        assert!(slots.idle > 0);
    }

    /// No completed passes (the only vehicle enters during warmup) must
    /// report the read ratio as absent, not zero.
    #[test]
    fn no_completed_passes_reports_null_read_ratio() {
        let s = scenario(|c| {
            c.traffic = TrafficSelector::Custom(TrafficModel {
                speed_range_mps: (10.0, 10.0),
                headway_range_s: (1_000.0, 1_000.0),
                lanes: 1,
            });
            c.duration_s = 30.0;
            c.warmup_s = 10.0; // vehicle enters coverage at t = 0.5 s
        });
        let report = run(&s);
        assert_eq!(report.census.completed, 0);
        assert_eq!(report.read_ratio, None);
        assert_eq!(report.dwell_s, None);
        assert_eq!(report.awake_fraction, None);
        // The tag still authenticated; it just fell outside the window.
        assert_eq!(report.census.authenticated, 1);
    }

    /// An (almost) empty road: the reader duty cycle collapses to one
    /// short frame per scan period.
    #[test]
    fn idle_reader_duty_cycle_tracks_scan_period() {
        let s = scenario(|c| {
            c.traffic = TrafficSelector::Custom(TrafficModel {
                speed_range_mps: (10.0, 10.0),
                headway_range_s: (1_000.0, 1_000.0),
                lanes: 1,
            });
            c.bandwidth_bps = Some(1_000_000.0);
            c.duration_s = 60.0;
        });
        let report = run(&s);
        // Steady state: one 22-bit query plus one idle slot per 100 ms.
        let cycle_awake = 22e-6 + (16e-6 + 62.5e-6) / 2.0;
        let analytic = cycle_awake / 0.1;
        assert!(
            report.reader_awake_fraction < 4.0 * analytic
                && report.reader_awake_fraction > 0.5 * analytic,
            "awake fraction {} vs analytic {analytic}",
            report.reader_awake_fraction
        );
    }

    #[test]
    fn identical_scenarios_produce_identical_traces_and_reports() {
        let s = scenario(|c| {
            c.duration_s = 10.0;
            c.seed = 9;
        });
        let opts = RunOptions {
            capture_trace: true,
            capture_transcripts: true,
        };
        let a = run_full(&s, opts);
        let b = run_full(&s, opts);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.transcripts, b.transcripts);
        assert_eq!(a.report, b.report);
        assert!(!a.trace.is_empty());
        // Capture settings must not influence the outcome.
        let bare = run(&s);
        assert_eq!(bare, a.report);
    }

    /// Same seed, sleep toggled: the vehicle stream is identical and
    /// sleeping strictly reduces per-tag awake time.
    #[test]
    fn sleep_toggle_keeps_traffic_and_cuts_awake_time() {
        let on = scenario(|c| {
            c.traffic = TrafficSelector::Named(TrafficClass::Heavy);
            c.duration_s = 60.0;
            c.seed = 5;
        });
        let mut off = on.clone();
        off.sleep_enabled = false;
        let r_on = run(&on);
        let r_off = run(&off);
        assert_eq!(r_on.census.spawned, r_off.census.spawned);
        assert_eq!(r_on.census.completed, r_off.census.completed);
        assert_eq!(r_on.dwell_s, r_off.dwell_s);
        assert_eq!(r_on.in_range_s_total, r_off.in_range_s_total);
        assert!(r_on.awake_s_total < r_off.awake_s_total);
        let fraction = r_on.awake_s_total / r_off.awake_s_total;
        assert!(
            (0.1..0.4).contains(&fraction),
            "awake time fraction {fraction}"
        );
        // Without sleep, tags are awake for their entire pass.
        assert!((r_off.awake_fraction.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adversarial_responders_are_rejected_and_degrade_nothing_silently() {
        let s = scenario(|c| {
            c.duration_s = 20.0;
            c.dos_responders = 4;
        });
        let report = run(&s);
        assert_eq!(report.false_accepts, 0);
        assert!(report.rejects.unknown_id > 0, "flooders must reach the server");
        // Flooders are not part of the tag census.
        assert_eq!(
            report.census.spawned,
            report.census.authenticated + report.census.missed + report.census.in_progress
        );
        assert!(report.slots.collision > 0);
    }

    #[test]
    fn baseline_timing_profile_reads_at_the_reference_latency() {
        let s = scenario(|c| {
            c.traffic = TrafficSelector::Custom(TrafficModel {
                speed_range_mps: (1.5, 1.5),
                headway_range_s: (1_000.0, 1_000.0),
                lanes: 1,
            });
            c.bandwidth_bps = Some(1_000_000.0);
            c.duration_s = 30.0;
            c.warmup_s = 0.0;
            c.protocol_profile = ProtocolProfile::BaselineTiming;
        });
        let report = run(&s);
        let lat = report.latency_ms.expect("one read");
        assert!((lat.mean - 1.7).abs() < 1e-9, "latency {} ms", lat.mean);
        // No cryptography is exercised under the timing profile.
        assert_eq!(report.server_ops.kem_decapsulations, 0);
        assert_eq!(report.census.authenticated, 1);
    }

    #[test]
    fn fixed_sleep_strategy_wakes_tags_inside_coverage() {
        let base = scenario(|c| {
            c.traffic = TrafficSelector::Named(TrafficClass::Heavy);
            c.duration_s = 60.0;
        });
        let mut fixed = base.clone();
        fixed.sleep_strategy = SleepStrategy::Fixed(1.0);
        let r_remaining = run(&base);
        let r_fixed = run(&fixed);
        // Heavy dwell is ~13 s: waking after 1 s forces repeated reads,
        // so tags spend strictly more time awake.
        assert!(
            r_fixed.awake_s_total > r_remaining.awake_s_total,
            "{} vs {}",
            r_fixed.awake_s_total,
            r_remaining.awake_s_total
        );
        assert!(r_fixed.slots.success > r_remaining.slots.success);
    }
}
