//! Physical-layer model: timing, coverage geometry, and the link budget.
//!
//! The default model is deliberately simple — a reader at the origin with a
//! circular coverage disc, and transmission time strictly proportional to
//! frame width over a shared channel bandwidth. An opt-in log-distance
//! path-loss model with log-normal shadowing refines the disc edge into a
//! probabilistic boundary; it is off by default so baseline runs stay
//! deterministic given a seed.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Physical parameters of the deployment.
///
/// Defaults describe a roadside UHF installation: a 900 MHz reader on a
/// 5 m mast covering a 10 m disc of roadway, battery-assisted tags at
/// antenna height 1 m drawing 40 mW while awake.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioParams {
    /// Tag power draw while awake, watts.
    pub tag_power_w: f64,
    /// Tag transmit power, dBm.
    pub tag_tx_dbm: f64,
    /// Reader transmit power, dBm.
    pub reader_tx_dbm: f64,
    /// Minimum power for the tag to decode the reader, dBm.
    pub tag_sensitivity_dbm: f64,
    /// Minimum power for the reader to decode a tag, dBm.
    pub reader_sensitivity_dbm: f64,
    /// Tag antenna height, metres.
    pub tag_antenna_height_m: f64,
    /// Reader antenna height, metres.
    pub reader_antenna_height_m: f64,
    /// Carrier frequency, hertz.
    pub frequency_hz: f64,
    /// Radius of the nominal coverage disc on the ground, metres.
    pub coverage_radius_m: f64,
    /// Log-distance path-loss exponent.
    pub path_loss_exponent: f64,
    /// Standard deviation of log-normal shadowing, dB.
    pub shadowing_sigma_db: f64,
    /// Shared channel bandwidth, bits per second.
    pub bandwidth_bps: f64,
    /// When false (default) reception succeeds exactly within the coverage
    /// disc; when true each link draw passes through the shadowed budget.
    pub shadowing_enabled: bool,
}

impl Default for RadioParams {
    fn default() -> Self {
        RadioParams {
            tag_power_w: 0.040,
            tag_tx_dbm: -10.0,
            reader_tx_dbm: 0.0,
            tag_sensitivity_dbm: -70.0,
            reader_sensitivity_dbm: -82.0,
            tag_antenna_height_m: 1.0,
            reader_antenna_height_m: 5.0,
            frequency_hz: 900.0e6,
            coverage_radius_m: 10.0,
            path_loss_exponent: 4.0,
            shadowing_sigma_db: 2.0,
            bandwidth_bps: 256_000.0,
            shadowing_enabled: false,
        }
    }
}

/// Which side transmits; budgets are asymmetric.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkDirection {
    /// Tag backscatter / reply toward the reader.
    TagToReader,
    /// Reader command toward the tag.
    ReaderToTag,
}

/// Reference distance of the log-distance model, metres.
pub const REFERENCE_DISTANCE_M: f64 = 1.0;

/// Time to serialize `bits` onto the channel.
pub fn tx_duration(bits: usize, bandwidth_bps: f64) -> f64 {
    bits as f64 / bandwidth_bps
}

impl RadioParams {
    /// Time to serialize `bits` at this deployment's bandwidth.
    pub fn tx_duration(&self, bits: usize) -> f64 {
        tx_duration(bits, self.bandwidth_bps)
    }

    /// Free-space loss at the reference distance for the configured
    /// carrier: `20·log10(d0) + 20·log10(f) − 147.55` dB (≈ 31.5 dB at
    /// 900 MHz).
    pub fn reference_loss_db(&self) -> f64 {
        20.0 * REFERENCE_DISTANCE_M.log10() + 20.0 * self.frequency_hz.log10() - 147.55
    }

    /// Mean log-distance path loss at `distance_m`, dB.
    pub fn path_loss_db(&self, distance_m: f64) -> f64 {
        let d = distance_m.max(REFERENCE_DISTANCE_M);
        self.reference_loss_db()
            + 10.0 * self.path_loss_exponent * (d / REFERENCE_DISTANCE_M).log10()
    }

    /// Mean received power at the far end of a link, dBm (no shadowing).
    pub fn received_power_dbm(&self, distance_m: f64, direction: LinkDirection) -> f64 {
        let tx = match direction {
            LinkDirection::TagToReader => self.tag_tx_dbm,
            LinkDirection::ReaderToTag => self.reader_tx_dbm,
        };
        tx - self.path_loss_db(distance_m)
    }

    /// Mean link margin: received power minus receiver sensitivity, dB.
    /// Positive margin means the mean budget closes.
    pub fn link_margin_db(&self, distance_m: f64, direction: LinkDirection) -> f64 {
        let sensitivity = match direction {
            LinkDirection::TagToReader => self.reader_sensitivity_dbm,
            LinkDirection::ReaderToTag => self.tag_sensitivity_dbm,
        };
        self.received_power_dbm(distance_m, direction) - sensitivity
    }

    /// Whether a ground position is inside the nominal coverage disc
    /// (boundary inclusive).
    pub fn in_range(&self, x_m: f64, y_m: f64) -> bool {
        x_m.hypot(y_m) <= self.coverage_radius_m
    }

    /// Whether one frame crosses the link.
    ///
    /// Deterministic mode accepts exactly the coverage disc and draws no
    /// randomness. Shadowed mode perturbs the mean budget with a fresh
    /// normal draw per frame; callers must pass the dedicated radio
    /// stream so these draws never shift other subsystems.
    pub fn link_success(
        &self,
        distance_m: f64,
        direction: LinkDirection,
        rng: &mut impl Rng,
    ) -> bool {
        if !self.shadowing_enabled {
            return distance_m <= self.coverage_radius_m;
        }
        let shadow = Normal::new(0.0, self.shadowing_sigma_db)
            .expect("validated sigma")
            .sample(rng);
        self.link_margin_db(distance_m, direction) + shadow >= 0.0
    }
}
