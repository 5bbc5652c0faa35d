//! Framed slotted-ALOHA arbitration with an adaptive frame size.
//!
//! A reader opens a frame of `2^q` slots; each participating tag answers in
//! one uniformly chosen slot. Slots resolve to idle (no reply), success
//! (exactly one reply, which proceeds to authentication), or collision.
//! The reader maintains a fractional exponent `q_fp` nudged up on
//! collisions and down on idles; whenever its rounding departs from the
//! frame's current exponent the reader abandons the frame and re-queries
//! with the new size, so gross mismatches between frame size and population
//! are corrected within a few slots rather than after a full frame.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Upper bound of the frame exponent: frames span 1 to 32768 slots.
pub const MAX_Q: f64 = 15.0;

/// Resolution of one arbitration slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotOutcome {
    /// No tag answered.
    Idle,
    /// Exactly one tag answered; it is singulated for authentication.
    Success,
    /// Two or more tags answered simultaneously.
    Collision,
}

/// Classifies a slot by how many tags replied in it.
pub fn classify_slot(responders: usize) -> SlotOutcome {
    match responders {
        0 => SlotOutcome::Idle,
        1 => SlotOutcome::Success,
        _ => SlotOutcome::Collision,
    }
}

/// One step of the adaptive exponent: collisions push `q_fp` up by `c`,
/// idles pull it down by `c`, successes leave it unchanged. The result is
/// clamped to `[0, 15]`.
pub fn adjust_q(q_fp: f64, outcome: SlotOutcome, c: f64) -> f64 {
    let adjusted = match outcome {
        SlotOutcome::Collision => q_fp + c,
        SlotOutcome::Idle => q_fp - c,
        SlotOutcome::Success => q_fp,
    };
    adjusted.clamp(0.0, MAX_Q)
}

/// Probability that a given slot of an `frame_size`-slot frame is a
/// success when `n_tags` tags each pick a slot uniformly:
/// `n/L · (1 − 1/L)^(n−1)`. This is the analytic oracle the stochastic
/// simulation is validated against; it peaks when the frame size matches
/// the population.
pub fn expected_success_fraction(n_tags: u64, frame_size: u64) -> f64 {
    if frame_size == 0 || n_tags == 0 {
        return 0.0;
    }
    let l = frame_size as f64;
    (n_tags as f64 / l) * (1.0 - 1.0 / l).powf(n_tags as f64 - 1.0)
}

/// What the reader does after recording a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotDecision {
    /// Serve the next slot of the current frame.
    Continue,
    /// The rounded exponent moved: abandon this frame and re-query with
    /// the new size.
    Restart,
    /// All slots served; issue a fresh query.
    FrameComplete,
}

/// The reader's arbitration state across slots and frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameState {
    q: u8,
    q_fp: f64,
    slot: u32,
}

impl FrameState {
    /// Starts arbitration with frame size `2^q0`.
    pub fn new(q0: u8) -> Self {
        let q = q0.min(MAX_Q as u8);
        FrameState {
            q,
            q_fp: f64::from(q),
            slot: 0,
        }
    }

    /// Current frame exponent.
    pub fn q(&self) -> u8 {
        self.q
    }

    /// Fractional exponent driving adaptation.
    pub fn q_fp(&self) -> f64 {
        self.q_fp
    }

    /// Slots in the current frame.
    pub fn frame_size(&self) -> u32 {
        1u32 << self.q
    }

    /// Index of the slot about to be served.
    pub fn slot(&self) -> u32 {
        self.slot
    }

    /// Records the outcome of the slot just served and decides whether the
    /// frame continues, restarts with a new size, or is complete. `c` is
    /// the adaptation step.
    pub fn record_slot(&mut self, outcome: SlotOutcome, c: f64) -> SlotDecision {
        self.q_fp = adjust_q(self.q_fp, outcome, c);
        self.slot += 1;
        let rounded = self.q_fp.round() as u8;
        if rounded != self.q {
            self.q = rounded;
            self.slot = 0;
            SlotDecision::Restart
        } else if self.slot >= self.frame_size() {
            self.slot = 0;
            SlotDecision::FrameComplete
        } else {
            SlotDecision::Continue
        }
    }
}

/// Slot tallies for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FrameTally {
    pub successes: u32,
    pub idles: u32,
    pub collisions: u32,
}

/// Simulates one fixed-size frame: `n_tags` tags each draw a uniform slot
/// and every slot is classified. Used to validate the analytic success
/// fraction and to study frame-size choices in isolation.
pub fn simulate_frame(n_tags: u64, frame_size: u32, rng: &mut impl Rng) -> FrameTally {
    assert!(frame_size > 0, "a frame has at least one slot");
    let mut occupancy = vec![0u32; frame_size as usize];
    for _ in 0..n_tags {
        occupancy[rng.gen_range(0..frame_size) as usize] += 1;
    }
    let mut tally = FrameTally::default();
    for count in occupancy {
        match classify_slot(count as usize) {
            SlotOutcome::Idle => tally.idles += 1,
            SlotOutcome::Success => tally.successes += 1,
            SlotOutcome::Collision => tally.collisions += 1,
        }
    }
    tally
}
