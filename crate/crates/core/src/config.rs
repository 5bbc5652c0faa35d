//! Scenario description, defaults, validation, and TOML parsing.
//!
//! A scenario is one self-contained experiment: a traffic model, a radio
//! deployment, protocol parameters, and a seed. Every field has a default
//! — the empty document is a valid scenario (medium traffic, 256 kb/s,
//! zero server delay, seed 42, sleep enabled) — and unknown keys are
//! rejected so typos fail loudly instead of silently running the wrong
//! experiment.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::SizeProfile;
use crate::radio::RadioParams;
use crate::traffic::{RoadGeometry, TrafficClass, TrafficModel};

/// Scenario rejection: malformed document or invalid parameter values.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// Which protocol occupies the air during a read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolProfile {
    /// The full hybrid handshake with real cryptography.
    Hybrid,
    /// A timing-only stand-in for the reference scheme being compared
    /// against: each read occupies the air for a fixed duration
    /// (`baseline_read_ms`) with no cryptographic exchange.
    BaselineTiming,
}

/// How the reader estimates the sleep time it grants an authenticated tag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SleepStrategy {
    /// Sleep for the estimated remainder of the tag's pass through
    /// coverage, so it wakes only after leaving.
    RemainingRange,
    /// Sleep for a fixed duration; tags whose dwell exceeds it wake up
    /// inside coverage and re-authenticate.
    Fixed(f64),
}

/// Traffic selection in a config document: a stock name or a full custom
/// model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrafficSelector {
    Named(TrafficClass),
    Custom(TrafficModel),
}

impl TrafficSelector {
    pub fn resolve(&self) -> TrafficModel {
        match self {
            TrafficSelector::Named(class) => TrafficModel::of_class(*class),
            TrafficSelector::Custom(model) => *model,
        }
    }
}

/// Sleep-strategy selection in a config document.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum SleepStrategyConfig {
    Named(SleepStrategyName),
    Fixed { fixed_s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum SleepStrategyName {
    RemainingRange,
}

/// The TOML-facing scenario document. All fields optional with defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Traffic model name (`"light"`, `"medium"`, `"heavy"`) or inline
    /// table with `speed_range_mps`, `headway_range_s`, `lanes`.
    pub traffic: TrafficSelector,
    /// Simulated duration, seconds.
    pub duration_s: f64,
    /// Master seed; fully determines the run.
    pub seed: u64,
    /// Shared channel bandwidth, bits per second. Overrides
    /// `radio.bandwidth_bps` when set.
    pub bandwidth_bps: Option<f64>,
    /// One-way reader↔server link delay, seconds.
    pub server_delay_s: f64,
    /// Air-interface protocol under test.
    pub protocol_profile: ProtocolProfile,
    /// Read duration charged per tag under the baseline timing profile,
    /// milliseconds.
    pub baseline_read_ms: f64,
    /// Whether authenticated tags power down.
    pub sleep_enabled: bool,
    /// `"remaining-range"` or `{ fixed_s = <seconds> }`.
    sleep_strategy: SleepStrategyConfig,
    /// Stats exclude events before this time, seconds.
    pub warmup_s: f64,
    /// Idle-reader wake interval, seconds.
    pub reader_scan_period_s: f64,
    /// Sleeping tags stay down this long between wake-checks, seconds.
    pub sleep_check_period_s: f64,
    /// Length of each wake-check listen window, seconds.
    pub sleep_check_duration_s: f64,
    /// Initial frame exponent.
    pub q_initial: u8,
    /// Frame-exponent adaptation step.
    pub q_step: f64,
    /// Link turnaround between transmissions, seconds.
    pub slot_turnaround_s: f64,
    /// Reader challenge width, bits.
    pub cr_bits: u32,
    /// Tag challenge width, bits.
    pub ct_bits: u32,
    /// Number of always-present adversarial responders flooding the
    /// frames (0 disables).
    pub dos_responders: u32,
    /// `[geometry]` table: lane spacing and approach distance.
    pub geometry: RoadGeometry,
    /// `[radio]` table: full physical-layer parameter set.
    pub radio: RadioParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            traffic: TrafficSelector::Named(TrafficClass::Medium),
            duration_s: 120.0,
            seed: 42,
            bandwidth_bps: None,
            server_delay_s: 0.0,
            protocol_profile: ProtocolProfile::Hybrid,
            baseline_read_ms: 1.7,
            sleep_enabled: true,
            sleep_strategy: SleepStrategyConfig::Named(SleepStrategyName::RemainingRange),
            warmup_s: 5.0,
            reader_scan_period_s: 0.1,
            sleep_check_period_s: 0.1,
            sleep_check_duration_s: 0.025,
            q_initial: 4,
            q_step: 0.3,
            slot_turnaround_s: 62.5e-6,
            cr_bits: 32,
            ct_bits: 32,
            dos_responders: 0,
            geometry: RoadGeometry::default(),
            radio: RadioParams::default(),
        }
    }
}

/// A validated, fully resolved scenario ready to run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub traffic: TrafficModel,
    pub traffic_label: String,
    pub duration_s: f64,
    pub seed: u64,
    pub server_delay_s: f64,
    pub protocol_profile: ProtocolProfile,
    pub baseline_read_s: f64,
    pub sleep_enabled: bool,
    pub sleep_strategy: SleepStrategy,
    pub warmup_s: f64,
    pub reader_scan_period_s: f64,
    pub sleep_check_period_s: f64,
    pub sleep_check_duration_s: f64,
    pub q_initial: u8,
    pub q_step: f64,
    pub slot_turnaround_s: f64,
    pub profile: SizeProfile,
    pub dos_responders: u32,
    pub geometry: RoadGeometry,
    pub radio: RadioParams,
}

impl Default for Scenario {
    fn default() -> Self {
        ScenarioConfig::default()
            .resolve()
            .expect("default scenario is valid")
    }
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

impl ScenarioConfig {
    /// Validates every field and produces the runnable scenario.
    pub fn resolve(&self) -> Result<Scenario, ConfigError> {
        let mut radio = self.radio;
        if let Some(bw) = self.bandwidth_bps {
            radio.bandwidth_bps = bw;
        }
        if !(radio.bandwidth_bps > 0.0) {
            return Err(invalid(format!(
                "bandwidth_bps must be positive, got {}",
                radio.bandwidth_bps
            )));
        }
        if !(self.duration_s > 0.0) {
            return Err(invalid(format!(
                "duration_s must be positive, got {}",
                self.duration_s
            )));
        }
        if !(self.server_delay_s >= 0.0) {
            return Err(invalid(format!(
                "server_delay_s must be non-negative, got {}",
                self.server_delay_s
            )));
        }
        if !(self.warmup_s >= 0.0) || self.warmup_s >= self.duration_s {
            return Err(invalid(format!(
                "warmup_s must lie in [0, duration_s), got {}",
                self.warmup_s
            )));
        }
        if !(self.reader_scan_period_s > 0.0) {
            return Err(invalid("reader_scan_period_s must be positive"));
        }
        if !(self.sleep_check_period_s > 0.0) {
            return Err(invalid("sleep_check_period_s must be positive"));
        }
        if !(self.sleep_check_duration_s >= 0.0) {
            return Err(invalid("sleep_check_duration_s must be non-negative"));
        }
        if !(0.1..=0.5).contains(&self.q_step) {
            return Err(invalid(format!(
                "q_step must lie in [0.1, 0.5], got {}",
                self.q_step
            )));
        }
        if self.q_initial > 15 {
            return Err(invalid("q_initial must be at most 15"));
        }
        if !(self.slot_turnaround_s >= 0.0) {
            return Err(invalid("slot_turnaround_s must be non-negative"));
        }
        if !(self.baseline_read_ms > 0.0) {
            return Err(invalid("baseline_read_ms must be positive"));
        }

        let traffic = self.traffic.resolve();
        let (speed_lo, speed_hi) = traffic.speed_range_mps;
        if !(speed_lo > 0.0) || speed_hi < speed_lo {
            return Err(invalid(format!(
                "speed range must satisfy 0 < lo <= hi, got ({speed_lo}, {speed_hi})"
            )));
        }
        let (head_lo, head_hi) = traffic.headway_range_s;
        if !(head_lo >= 0.0) || head_hi < head_lo {
            return Err(invalid(format!(
                "headway range must satisfy 0 <= lo <= hi, got ({head_lo}, {head_hi})"
            )));
        }
        if traffic.lanes == 0 {
            return Err(invalid("traffic must have at least one lane"));
        }

        if !(radio.coverage_radius_m > 0.0) {
            return Err(invalid("coverage_radius_m must be positive"));
        }
        if !(radio.shadowing_sigma_db >= 0.0) {
            return Err(invalid("shadowing_sigma_db must be non-negative"));
        }
        if radio.shadowing_enabled && radio.shadowing_sigma_db == 0.0 {
            return Err(invalid(
                "shadowing_enabled requires a positive shadowing_sigma_db",
            ));
        }
        if !(radio.path_loss_exponent > 0.0) {
            return Err(invalid("path_loss_exponent must be positive"));
        }
        if !(radio.tag_power_w > 0.0) {
            return Err(invalid("tag_power_w must be positive"));
        }
        if !(self.geometry.lane_width_m > 0.0) {
            return Err(invalid("lane_width_m must be positive"));
        }
        if self.geometry.approach_m < radio.coverage_radius_m {
            return Err(invalid(format!(
                "approach_m ({}) must be at least the coverage radius ({}) so \
                 vehicles spawn outside coverage",
                self.geometry.approach_m, radio.coverage_radius_m
            )));
        }

        let profile = SizeProfile::new(self.cr_bits, self.ct_bits)
            .map_err(|e| invalid(e.to_string()))?;

        let sleep_strategy = match self.sleep_strategy {
            SleepStrategyConfig::Named(SleepStrategyName::RemainingRange) => {
                SleepStrategy::RemainingRange
            }
            SleepStrategyConfig::Fixed { fixed_s } => {
                if !(fixed_s > 0.0) {
                    return Err(invalid("sleep_strategy.fixed_s must be positive"));
                }
                SleepStrategy::Fixed(fixed_s)
            }
        };

        let traffic_label = match self.traffic {
            TrafficSelector::Named(TrafficClass::Light) => "light".to_owned(),
            TrafficSelector::Named(TrafficClass::Medium) => "medium".to_owned(),
            TrafficSelector::Named(TrafficClass::Heavy) => "heavy".to_owned(),
            TrafficSelector::Custom(_) => "custom".to_owned(),
        };

        Ok(Scenario {
            traffic,
            traffic_label,
            duration_s: self.duration_s,
            seed: self.seed,
            server_delay_s: self.server_delay_s,
            protocol_profile: self.protocol_profile,
            baseline_read_s: self.baseline_read_ms * 1e-3,
            sleep_enabled: self.sleep_enabled,
            sleep_strategy,
            warmup_s: self.warmup_s,
            reader_scan_period_s: self.reader_scan_period_s,
            sleep_check_period_s: self.sleep_check_period_s,
            sleep_check_duration_s: self.sleep_check_duration_s,
            q_initial: self.q_initial,
            q_step: self.q_step,
            slot_turnaround_s: self.slot_turnaround_s,
            profile,
            dos_responders: self.dos_responders,
            geometry: self.geometry,
            radio,
        })
    }
}

/// Parses and validates a TOML scenario document.
pub fn parse_config(text: &str) -> Result<Scenario, ConfigError> {
    let config: ScenarioConfig =
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    config.resolve()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_yields_full_defaults() {
        let s = parse_config("").unwrap();
        assert_eq!(s.traffic, TrafficModel::medium());
        assert_eq!(s.traffic_label, "medium");
        assert_eq!(s.radio.bandwidth_bps, 256_000.0);
        assert_eq!(s.server_delay_s, 0.0);
        assert_eq!(s.seed, 42);
        assert_eq!(s.duration_s, 120.0);
        assert!(s.sleep_enabled);
        assert_eq!(s.protocol_profile, ProtocolProfile::Hybrid);
        assert_eq!(s.sleep_strategy, SleepStrategy::RemainingRange);
        assert_eq!(s.warmup_s, 5.0);
        assert_eq!(s.q_initial, 4);
        assert_eq!(s.q_step, 0.3);
        assert_eq!(s.slot_turnaround_s, 62.5e-6);
        assert_eq!(s.geometry.lane_width_m, 1.0);
    }

    #[test]
    fn named_traffic_resolves_to_the_model_table() {
        let s = parse_config("traffic = \"heavy\"").unwrap();
        assert_eq!(s.traffic, TrafficModel::heavy());
        assert_eq!(s.traffic.lanes, 6);
        assert_eq!(s.traffic_label, "heavy");
    }

    #[test]
    fn custom_traffic_table_is_accepted() {
        let doc = r#"
            [traffic]
            speed_range_mps = [10.0, 10.0]
            headway_range_s = [100.0, 100.0]
            lanes = 1
        "#;
        let s = parse_config(doc).unwrap();
        assert_eq!(s.traffic.lanes, 1);
        assert_eq!(s.traffic.speed_range_mps, (10.0, 10.0));
        assert_eq!(s.traffic_label, "custom");
    }

    #[test]
    fn negative_bandwidth_is_a_config_error() {
        assert!(matches!(
            parse_config("bandwidth_bps = -1"),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse_config("bandwdith = 1000").unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)));
        let err = parse_config("[radio]\nfrequency_ghz = 0.9").unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)));
    }

    #[test]
    fn bandwidth_override_applies_to_radio() {
        let s = parse_config("bandwidth_bps = 1e6").unwrap();
        assert_eq!(s.radio.bandwidth_bps, 1_000_000.0);
        let doc = "bandwidth_bps = 128000\n[radio]\nbandwidth_bps = 999.0";
        let s = parse_config(doc).unwrap();
        // The top-level key wins over the radio table.
        assert_eq!(s.radio.bandwidth_bps, 128_000.0);
    }

    #[test]
    fn sleep_strategy_forms() {
        let s = parse_config("sleep_strategy = \"remaining-range\"").unwrap();
        assert_eq!(s.sleep_strategy, SleepStrategy::RemainingRange);
        let s = parse_config("sleep_strategy = { fixed_s = 2.0 }").unwrap();
        assert_eq!(s.sleep_strategy, SleepStrategy::Fixed(2.0));
        assert!(parse_config("sleep_strategy = { fixed_s = 0.0 }").is_err());
        assert!(parse_config("sleep_strategy = \"forever\"").is_err());
    }

    #[test]
    fn validation_catches_out_of_range_values() {
        for doc in [
            "duration_s = 0",
            "server_delay_s = -0.001",
            "warmup_s = 120",
            "warmup_s = -1",
            "reader_scan_period_s = 0",
            "q_step = 0.05",
            "q_step = 0.6",
            "q_initial = 16",
            "cr_bits = 12",
            "dos_responders = -1",
            "baseline_read_ms = 0",
            "[geometry]\napproach_m = 5.0",
            "[radio]\ncoverage_radius_m = -2",
            "[radio]\nshadowing_enabled = true\nshadowing_sigma_db = 0.0",
            "[traffic]\nspeed_range_mps = [0.0, 5.0]\nheadway_range_s = [1, 2]\nlanes = 2",
            "[traffic]\nspeed_range_mps = [5.0, 4.0]\nheadway_range_s = [1, 2]\nlanes = 2",
        ] {
            assert!(parse_config(doc).is_err(), "accepted: {doc}");
        }
    }

    #[test]
    fn protocol_profile_and_attack_knobs_parse() {
        let s = parse_config("protocol_profile = \"baseline-timing\"").unwrap();
        assert_eq!(s.protocol_profile, ProtocolProfile::BaselineTiming);
        assert!((s.baseline_read_s - 1.7e-3).abs() < 1e-12);
        let s = parse_config("dos_responders = 8").unwrap();
        assert_eq!(s.dos_responders, 8);
    }
}
