//! Run reports, parameter sweeps, and deterministic CSV emission.
//!
//! A [`MetricsReport`] is the complete quantitative outcome of one run.
//! Sweeps execute a grid of scenarios in parallel (each run stays
//! single-threaded, so every row is independently reproducible), and the
//! CSV writer formats numbers to six significant digits with a pinned
//! column order so identical scenarios always produce byte-identical
//! files.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::AttackVerdict;
use crate::config::{ProtocolProfile, Scenario};
use crate::protocol::ServerOpCounts;
use crate::simcore;
use crate::traffic::{TrafficClass, TrafficModel};

/// Identifies which scenario a report row came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLabel {
    pub traffic: String,
    pub bandwidth_bps: f64,
    pub server_delay_ms: f64,
    pub seed: u64,
    pub sleep_enabled: bool,
    pub profile: String,
}

impl RunLabel {
    pub fn of(scenario: &Scenario) -> Self {
        RunLabel {
            traffic: scenario.traffic_label.clone(),
            bandwidth_bps: scenario.radio.bandwidth_bps,
            server_delay_ms: scenario.server_delay_s * 1e3,
            seed: scenario.seed,
            sleep_enabled: scenario.sleep_enabled,
            profile: match scenario.protocol_profile {
                ProtocolProfile::Hybrid => "hybrid".to_owned(),
                ProtocolProfile::BaselineTiming => "baseline-timing".to_owned(),
            },
        }
    }
}

/// Order statistics over one sample set. `None` wherever there are no
/// samples, so absent data is never confused with a zero measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatSummary {
    pub count: u64,
    pub min: f64,
    pub mean: f64,
    pub p95: f64,
}

impl StatSummary {
    /// Summarizes a sample set; `None` when empty. The 95th percentile is
    /// the smallest sample with at least 95 % of the set at or below it.
    pub fn from_samples(samples: &[f64]) -> Option<StatSummary> {
        if samples.is_empty() {
            return None;
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Some(StatSummary {
            count: n as u64,
            min: sorted[0],
            mean: sorted.iter().sum::<f64>() / n as f64,
            p95: sorted[rank - 1],
        })
    }
}

/// Arbitration slot totals for a whole run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SlotTotals {
    pub idle: u64,
    pub success: u64,
    pub collision: u64,
}

/// Server-side rejection totals by reason.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RejectTotals {
    pub kem_failure: u64,
    pub sym_failure: u64,
    pub unknown_id: u64,
    pub challenge_mismatch: u64,
}

impl RejectTotals {
    pub fn total(&self) -> u64 {
        self.kem_failure + self.sym_failure + self.unknown_id + self.challenge_mismatch
    }
}

/// Population accounting over every tag the run spawned. The buckets are
/// disjoint and sum to `spawned`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TagCensus {
    /// Tags created by the traffic stream (adversarial responders
    /// excluded).
    pub spawned: u64,
    /// Authenticated at least once.
    pub authenticated: u64,
    /// Left coverage without ever authenticating.
    pub missed: u64,
    /// Still inside (or yet to reach) coverage at the end of the run.
    pub in_progress: u64,
    /// Tags whose entire pass fits in the measurement window
    /// (entered after warmup, exited before the end).
    pub completed: u64,
    /// Completed-pass tags that authenticated.
    pub authenticated_completed: u64,
}

/// The full quantitative outcome of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: RunLabel,
    pub census: TagCensus,
    /// Authenticated fraction of completed passes; `None` when no pass
    /// completed (an empty road is reported as absent, not as zero).
    pub read_ratio: Option<f64>,
    /// Per-tag successful-read latency, milliseconds, from receipt of the
    /// opening query of the successful frame to acceptance of the final
    /// message. One sample per tag (its first acceptance), taken after
    /// warmup. Includes the server round trip when the delay is nonzero.
    pub latency_ms: Option<StatSummary>,
    /// In-coverage dwell of completed passes, seconds.
    pub dwell_s: Option<StatSummary>,
    /// Mean over completed passes of awake time / in-coverage time.
    pub awake_fraction: Option<f64>,
    /// Mean per-tag front-end energy over completed passes, millijoules.
    pub energy_mj: Option<f64>,
    /// Summed awake and in-coverage seconds over completed passes, for
    /// paired-run energy comparisons.
    pub awake_s_total: f64,
    pub in_range_s_total: f64,
    pub slots: SlotTotals,
    /// Fraction of the run the reader spent transmitting or listening.
    pub reader_awake_fraction: f64,
    pub server_ops: ServerOpCounts,
    pub rejects: RejectTotals,
    /// Accepts granted to adversarial responders (must stay zero).
    pub false_accepts: u64,
    pub sym_cipher: String,
    pub kem_scheme: String,
    pub attack_verdicts: Option<Vec<AttackVerdict>>,
}

// ---------------------------------------------------------------------------
// Sweeps

/// One swept parameter and the values it takes.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    ServerDelayMs(Vec<f64>),
    BandwidthBps(Vec<f64>),
    Traffic(Vec<TrafficClass>),
    Seed(Vec<u64>),
}

impl SweepAxis {
    fn expand(&self, base: &Scenario) -> Vec<Scenario> {
        match self {
            SweepAxis::ServerDelayMs(values) => values
                .iter()
                .map(|ms| {
                    let mut s = base.clone();
                    s.server_delay_s = ms * 1e-3;
                    s
                })
                .collect(),
            SweepAxis::BandwidthBps(values) => values
                .iter()
                .map(|bw| {
                    let mut s = base.clone();
                    s.radio.bandwidth_bps = *bw;
                    s
                })
                .collect(),
            SweepAxis::Traffic(values) => values
                .iter()
                .map(|class| {
                    let mut s = base.clone();
                    s.traffic = TrafficModel::of_class(*class);
                    s.traffic_label = match class {
                        TrafficClass::Light => "light".to_owned(),
                        TrafficClass::Medium => "medium".to_owned(),
                        TrafficClass::Heavy => "heavy".to_owned(),
                    };
                    s
                })
                .collect(),
            SweepAxis::Seed(values) => values
                .iter()
                .map(|seed| {
                    let mut s = base.clone();
                    s.seed = *seed;
                    s
                })
                .collect(),
        }
    }
}

/// Expands the cartesian grid of all axes over the base scenario, in
/// axis-major order (later axes vary fastest).
pub fn sweep_grid(base: &Scenario, axes: &[SweepAxis]) -> Vec<Scenario> {
    let mut grid = vec![base.clone()];
    for axis in axes {
        grid = grid.iter().flat_map(|s| axis.expand(s)).collect();
    }
    grid
}

/// Runs the whole grid, one single-threaded simulation per point,
/// parallelized across points. Row order always matches [`sweep_grid`]
/// regardless of execution interleaving.
pub fn run_sweep(base: &Scenario, axes: &[SweepAxis]) -> Vec<MetricsReport> {
    sweep_grid(base, axes)
        .par_iter()
        .map(simcore::run)
        .collect()
}

// ---------------------------------------------------------------------------
// CSV emission

/// Pinned CSV column order. Changing this breaks downstream consumers;
/// append, never reorder.
pub const CSV_COLUMNS: [&str; 31] = [
    "traffic",
    "bandwidth_bps",
    "server_delay_ms",
    "seed",
    "sleep_enabled",
    "profile",
    "spawned",
    "completed",
    "authenticated",
    "missed",
    "in_progress",
    "read_ratio",
    "latency_ms_min",
    "latency_ms_mean",
    "latency_ms_p95",
    "latency_count",
    "dwell_s_mean",
    "awake_fraction",
    "energy_mj",
    "slots_idle",
    "slots_success",
    "slots_collision",
    "reader_awake_fraction",
    "kem_decapsulations",
    "sym_decryptions",
    "sym_encryptions",
    "rejects_kem",
    "rejects_sym",
    "rejects_unknown_id",
    "rejects_challenge",
    "false_accepts",
];

/// Formats a float with `digits` significant digits, plain notation.
/// Values whose magnitude exceeds the requested precision fall back to
/// integer rendering, which is exact for the counts this writer emits.
pub fn format_sig(x: f64, digits: u32) -> String {
    if x == 0.0 {
        return "0".to_owned();
    }
    if !x.is_finite() {
        return "null".to_owned();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (digits as i32 - 1 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

fn opt_sig(x: Option<f64>) -> String {
    match x {
        Some(v) => format_sig(v, 6),
        None => "null".to_owned(),
    }
}

/// Renders reports as CSV: a pinned header plus one row per report.
/// Deterministic byte-for-byte for identical inputs; zero reports yield
/// the bare header.
pub fn emit_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::new();
    out.push_str(&CSV_COLUMNS.join(","));
    out.push('\n');
    for r in reports {
        let lat = r.latency_ms;
        let row: [String; 31] = [
            r.label.traffic.clone(),
            format_sig(r.label.bandwidth_bps, 6),
            format_sig(r.label.server_delay_ms, 6),
            r.label.seed.to_string(),
            r.label.sleep_enabled.to_string(),
            r.label.profile.clone(),
            r.census.spawned.to_string(),
            r.census.completed.to_string(),
            r.census.authenticated.to_string(),
            r.census.missed.to_string(),
            r.census.in_progress.to_string(),
            opt_sig(r.read_ratio),
            opt_sig(lat.map(|s| s.min)),
            opt_sig(lat.map(|s| s.mean)),
            opt_sig(lat.map(|s| s.p95)),
            lat.map_or("0".to_owned(), |s| s.count.to_string()),
            opt_sig(r.dwell_s.map(|s| s.mean)),
            opt_sig(r.awake_fraction),
            opt_sig(r.energy_mj),
            r.slots.idle.to_string(),
            r.slots.success.to_string(),
            r.slots.collision.to_string(),
            format_sig(r.reader_awake_fraction, 6),
            r.server_ops.kem_decapsulations.to_string(),
            r.server_ops.sym_decryptions.to_string(),
            r.server_ops.sym_encryptions.to_string(),
            r.rejects.kem_failure.to_string(),
            r.rejects.sym_failure.to_string(),
            r.rejects.unknown_id.to_string(),
            r.rejects.challenge_mismatch.to_string(),
            r.false_accepts.to_string(),
        ];
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Renders one report as a short human-readable block.
pub fn summarize(r: &MetricsReport) -> String {
    let mut out = String::new();
    let l = &r.label;
    out.push_str(&format!(
        "{} traffic at {} b/s, {} ms server delay, seed {}, sleep {}, {} protocol\n",
        l.traffic,
        format_sig(l.bandwidth_bps, 6),
        format_sig(l.server_delay_ms, 6),
        l.seed,
        if l.sleep_enabled { "on" } else { "off" },
        l.profile,
    ));
    let c = &r.census;
    out.push_str(&format!(
        "tags: {} spawned, {} completed passes, {} authenticated, {} missed, {} in progress\n",
        c.spawned, c.completed, c.authenticated, c.missed, c.in_progress
    ));
    out.push_str(&match r.read_ratio {
        Some(ratio) => format!("read ratio: {:.2} % of completed passes\n", ratio * 100.0),
        None => "read ratio: no completed passes\n".to_owned(),
    });
    if let Some(lat) = r.latency_ms {
        out.push_str(&format!(
            "latency: min {:.4} / mean {:.4} / p95 {:.4} ms over {} reads\n",
            lat.min, lat.mean, lat.p95, lat.count
        ));
    }
    if let (Some(dwell), Some(awake), Some(energy)) = (r.dwell_s, r.awake_fraction, r.energy_mj) {
        out.push_str(&format!(
            "dwell: mean {:.3} s; awake fraction {:.1} %; energy {:.3} mJ per tag\n",
            dwell.mean,
            awake * 100.0,
            energy
        ));
    }
    out.push_str(&format!(
        "slots: {} success, {} idle, {} collision; reader awake {:.1} %\n",
        r.slots.success,
        r.slots.idle,
        r.slots.collision,
        r.reader_awake_fraction * 100.0
    ));
    out.push_str(&format!(
        "server: {} decapsulations, {} decryptions, {} encryptions; {} rejects \
         (kem {}, sym {}, unknown-id {}, challenge {}); {} false accepts\n",
        r.server_ops.kem_decapsulations,
        r.server_ops.sym_decryptions,
        r.server_ops.sym_encryptions,
        r.rejects.total(),
        r.rejects.kem_failure,
        r.rejects.sym_failure,
        r.rejects.unknown_id,
        r.rejects.challenge_mismatch,
        r.false_accepts
    ));
    out.push_str(&format!("crypto: {} + {}\n", r.sym_cipher, r.kem_scheme));
    if let Some(verdicts) = &r.attack_verdicts {
        for v in verdicts {
            out.push_str(&format!(
                "attack {:?}: {} successes / {} attempts ({})\n",
                v.attack, v.successes, v.attempts, v.detail
            ));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Headline reproduction checks

/// One named pass/fail line with the measured numbers behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckLine {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckLine {
    pub fn render(&self) -> String {
        format!(
            "{}: {} ({})",
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.detail
        )
    }
}

fn scenario(edit: impl FnOnce(&mut crate::config::ScenarioConfig)) -> Scenario {
    let mut config = crate::config::ScenarioConfig::default();
    edit(&mut config);
    config.resolve().expect("check scenario must be valid")
}

/// Mean read ratio over ten seeds of congested medium traffic at
/// 128 kb/s with a 10 ms one-way server delay must stay at or above 0.88.
pub fn check_congested_read_ratio() -> CheckLine {
    let base = scenario(|c| {
        c.bandwidth_bps = Some(128_000.0);
        c.server_delay_s = 10e-3;
    });
    let seeds: Vec<u64> = (1..=10).collect();
    let reports = run_sweep(&base, &[SweepAxis::Seed(seeds)]);
    let ratios: Vec<f64> = reports.iter().filter_map(|r| r.read_ratio).collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len().max(1) as f64;
    CheckLine {
        name: "congested read ratio (medium, 128 kb/s, 10 ms delay, 10 seeds) >= 0.88"
            .to_owned(),
        passed: ratios.len() == 10 && mean >= 0.88,
        detail: format!("mean read_ratio = {mean:.4} over {} runs", ratios.len()),
    }
}

/// Read ratio must not increase as the server delay grows across
/// {0, 5, 10, 15, 20, 25} ms at 256 kb/s medium traffic, allowing a one
/// percentage point noise band between adjacent points.
pub fn check_delay_monotonicity() -> CheckLine {
    let delays = vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0];
    let reports = run_sweep(&Scenario::default(), &[SweepAxis::ServerDelayMs(delays.clone())]);
    let ratios: Vec<Option<f64>> = reports.iter().map(|r| r.read_ratio).collect();
    let mut passed = ratios.iter().all(Option::is_some);
    if passed {
        for pair in ratios.windows(2) {
            if pair[1].unwrap() > pair[0].unwrap() + 0.01 {
                passed = false;
            }
        }
    }
    let rendered: Vec<String> = ratios
        .iter()
        .map(|r| r.map_or("null".to_owned(), |v| format!("{v:.4}")))
        .collect();
    CheckLine {
        name: "read ratio non-increasing over server delay {0..25} ms (1 % band)".to_owned(),
        passed,
        detail: format!("ratios = [{}]", rendered.join(", ")),
    }
}

/// Mean dwell targets, seconds, for the three stock traffic classes.
pub const DWELL_TARGETS_S: [(TrafficClass, f64); 3] = [
    (TrafficClass::Light, 0.718),
    (TrafficClass::Medium, 1.612),
    (TrafficClass::Heavy, 13.333),
];

/// Simulated mean dwell per traffic class must land within ±15 % of the
/// published targets.
pub fn check_dwell_calibration() -> CheckLine {
    let mut passed = true;
    let mut details = Vec::new();
    for (class, target) in DWELL_TARGETS_S {
        let s = scenario(|c| c.traffic = crate::config::TrafficSelector::Named(class));
        let report = simcore::run(&s);
        let mean = report.dwell_s.map(|d| d.mean).unwrap_or(f64::NAN);
        let ok = (mean - target).abs() <= 0.15 * target;
        passed &= ok;
        details.push(format!("{}: {mean:.3} s vs {target} s", s.traffic_label));
    }
    CheckLine {
        name: "mean dwell within ±15 % of targets per traffic class".to_owned(),
        passed,
        detail: details.join("; "),
    }
}

/// With sleep scheduling on at 1 Mb/s, tags must spend 15–30 % of their
/// pass awake, for every traffic class.
pub fn check_awake_fraction() -> CheckLine {
    let mut passed = true;
    let mut details = Vec::new();
    for class in [TrafficClass::Light, TrafficClass::Medium, TrafficClass::Heavy] {
        let s = scenario(|c| {
            c.traffic = crate::config::TrafficSelector::Named(class);
            c.bandwidth_bps = Some(1_000_000.0);
        });
        let report = simcore::run(&s);
        let awake = report.awake_fraction.unwrap_or(f64::NAN);
        let ok = (0.15..=0.30).contains(&awake);
        passed &= ok;
        details.push(format!("{}: {:.1} %", s.traffic_label, awake * 100.0));
    }
    CheckLine {
        name: "awake fraction in [15 %, 30 %] with sleep scheduling, all classes".to_owned(),
        passed,
        detail: details.join("; "),
    }
}

/// Disabling sleep scheduling on heavy traffic must show that sleeping
/// removes 70–85 % of awake time, comparing paired runs on equal seeds.
pub fn check_sleep_energy_saving() -> CheckLine {
    let mut awake_on = 0.0;
    let mut awake_off = 0.0;
    for seed in [42, 43, 44] {
        let on = scenario(|c| {
            c.traffic = crate::config::TrafficSelector::Named(TrafficClass::Heavy);
            c.seed = seed;
        });
        let mut off_cfg = on.clone();
        off_cfg.sleep_enabled = false;
        awake_on += simcore::run(&on).awake_s_total;
        awake_off += simcore::run(&off_cfg).awake_s_total;
    }
    let reduction = 1.0 - awake_on / awake_off;
    CheckLine {
        name: "sleep scheduling removes 70–85 % of awake time (heavy, paired seeds)"
            .to_owned(),
        passed: (0.70..=0.85).contains(&reduction),
        detail: format!(
            "awake {:.1} s with sleep vs {:.1} s without ({:.1} % reduction)",
            awake_on,
            awake_off,
            reduction * 100.0
        ),
    }
}

/// A lone slow vehicle at 1 Mb/s with no server delay must authenticate
/// with an air-interface latency between 1.0 and 1.6 ms.
pub fn check_read_latency() -> CheckLine {
    let s = scenario(|c| {
        c.traffic = crate::config::TrafficSelector::Custom(TrafficModel {
            speed_range_mps: (1.5, 1.5),
            headway_range_s: (1_000.0, 1_000.0),
            lanes: 1,
        });
        c.bandwidth_bps = Some(1_000_000.0);
        c.duration_s = 30.0;
        c.warmup_s = 0.0;
    });
    let report = simcore::run(&s);
    let (count, mean) = report
        .latency_ms
        .map_or((0, f64::NAN), |l| (l.count, l.mean));
    CheckLine {
        name: "single-tag read latency in [1.0, 1.6] ms at 1 Mb/s, no server delay"
            .to_owned(),
        passed: count >= 1 && (1.0..=1.6).contains(&mean),
        detail: format!("mean latency = {mean:.4} ms over {count} reads"),
    }
}

/// All six headline checks, in report order.
pub fn reproduction_checks() -> Vec<CheckLine> {
    vec![
        check_congested_read_ratio(),
        check_delay_monotonicity(),
        check_dwell_calibration(),
        check_awake_fraction(),
        check_sleep_energy_saving(),
        check_read_latency(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_summary_orders_and_percentiles() {
        let s = StatSummary::from_samples(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(s.count, 3);
        assert_eq!(s.min, 1.0);
        assert!((s.mean - 2.0).abs() < 1e-12);
        assert_eq!(s.p95, 3.0);
        assert!(StatSummary::from_samples(&[]).is_none());

        let hundred: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = StatSummary::from_samples(&hundred).unwrap();
        assert_eq!(s.p95, 95.0);
        assert_eq!(s.min, 1.0);
    }

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(format_sig(0.0, 6), "0");
        assert_eq!(format_sig(1.5095, 6), "1.50950");
        assert_eq!(format_sig(0.948315, 6), "0.948315");
        assert_eq!(format_sig(256000.0, 6), "256000");
        assert_eq!(format_sig(-0.00123456, 6), "-0.00123456");
        // Parsing back recovers the value to six significant digits.
        for &x in &[13.1364, 1591.5e-3, 3.0e-5, 123456.0] {
            let parsed: f64 = format_sig(x, 6).parse().unwrap();
            assert!((parsed - x).abs() <= x.abs() * 5e-6, "{x} -> {parsed}");
        }
    }

    #[test]
    fn sweep_grid_is_cartesian_in_order() {
        let base = Scenario::default();
        let grid = sweep_grid(
            &base,
            &[
                SweepAxis::ServerDelayMs(vec![0.0, 5.0]),
                SweepAxis::Seed(vec![1, 2, 3]),
            ],
        );
        assert_eq!(grid.len(), 6);
        assert_eq!(grid[0].server_delay_s, 0.0);
        assert_eq!(grid[0].seed, 1);
        assert_eq!(grid[2].seed, 3);
        assert_eq!(grid[3].server_delay_s, 5e-3);
        assert_eq!(grid[3].seed, 1);
    }

    #[test]
    fn csv_header_only_for_empty_input() {
        let csv = emit_csv(&[]);
        assert_eq!(csv, format!("{}\n", CSV_COLUMNS.join(",")));
        assert_eq!(CSV_COLUMNS.len(), csv.trim_end().split(',').count());
    }
}
