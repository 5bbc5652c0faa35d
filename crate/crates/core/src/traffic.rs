//! Vehicle arrival and motion models for the monitored road segment.
//!
//! Vehicles travel straight along parallel lanes past a roadside reader at
//! the origin. Three stock flow regimes cover the interesting operating
//! points: free-flowing light traffic (fast, sparse), steady medium
//! traffic, and a creeping six-lane jam where tags linger in coverage for
//! many seconds. Arrivals are renewal processes per lane — independent
//! uniform headways — and each vehicle holds a uniform random speed for
//! its whole pass.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Shortest admissible gap between successive vehicles in one lane,
/// seconds. Sampled headways are clamped up to this floor.
pub const MIN_HEADWAY_S: f64 = 0.1;

/// Stock flow regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficClass {
    Light,
    Medium,
    Heavy,
}

/// Arrival and motion parameters for one flow regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficModel {
    /// Uniform per-vehicle speed range, metres per second.
    pub speed_range_mps: (f64, f64),
    /// Uniform per-gap headway range, seconds (clamped to
    /// [`MIN_HEADWAY_S`]).
    pub headway_range_s: (f64, f64),
    /// Number of parallel lanes.
    pub lanes: u32,
}

impl TrafficModel {
    /// Fast sparse flow: 22–42 m/s, 0–10 s headways, five lanes.
    pub fn light() -> Self {
        TrafficModel {
            speed_range_mps: (22.0, 42.0),
            headway_range_s: (0.0, 10.0),
            lanes: 5,
        }
    }

    /// Steady commuter flow: 11–14 m/s, 0.25–0.5 s headways, five lanes.
    pub fn medium() -> Self {
        TrafficModel {
            speed_range_mps: (11.0, 14.0),
            headway_range_s: (0.25, 0.5),
            lanes: 5,
        }
    }

    /// Stop-and-go jam: fixed 1.5 m/s crawl, fixed 3 s headways, six
    /// lanes.
    pub fn heavy() -> Self {
        TrafficModel {
            speed_range_mps: (1.5, 1.5),
            headway_range_s: (3.0, 3.0),
            lanes: 6,
        }
    }

    pub fn of_class(class: TrafficClass) -> Self {
        match class {
            TrafficClass::Light => TrafficModel::light(),
            TrafficClass::Medium => TrafficModel::medium(),
            TrafficClass::Heavy => TrafficModel::heavy(),
        }
    }

    /// Mean reciprocal speed `E[1/V]` for the uniform speed law — the
    /// factor converting a distance into an expected traversal time.
    pub fn mean_inverse_speed(&self) -> f64 {
        let (lo, hi) = self.speed_range_mps;
        if (hi - lo).abs() < 1e-12 {
            1.0 / lo
        } else {
            (hi / lo).ln() / (hi - lo)
        }
    }
}

/// One spawned vehicle carrying one tag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    /// Index in entry-time order across all lanes.
    pub id: u64,
    pub lane: u32,
    /// Constant speed for the whole pass, metres per second.
    pub speed_mps: f64,
    /// When the vehicle appears at the approach point, seconds.
    pub entry_time_s: f64,
}

/// Road layout around the reader at the origin.
///
/// Vehicles drive in the +x direction; lane centrelines run parallel to x
/// at the offsets given by [`lane_offsets`]. Each vehicle appears
/// `approach_m` before the reader's abscissa, outside coverage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoadGeometry {
    /// Centre-to-centre lane spacing, metres.
    pub lane_width_m: f64,
    /// Distance from the spawn point to the reader along x, metres.
    pub approach_m: f64,
}

impl Default for RoadGeometry {
    fn default() -> Self {
        RoadGeometry {
            lane_width_m: 1.0,
            approach_m: 15.0,
        }
    }
}

/// Perpendicular offsets of each lane centreline from the reader,
/// symmetric about zero: `(i − (lanes−1)/2) · width`.
pub fn lane_offsets(lanes: u32, lane_width_m: f64) -> Vec<f64> {
    (0..lanes)
        .map(|i| (i as f64 - (lanes as f64 - 1.0) / 2.0) * lane_width_m)
        .collect()
}

/// Ground position of a vehicle at time `t` (valid for `t ≥ entry_time`).
pub fn position_at(v: &Vehicle, geometry: &RoadGeometry, lanes: u32, t: f64) -> (f64, f64) {
    let x = -geometry.approach_m + v.speed_mps * (t - v.entry_time_s);
    let y = (v.lane as f64 - (lanes as f64 - 1.0) / 2.0) * geometry.lane_width_m;
    (x, y)
}

/// The interval during which a vehicle is inside the coverage disc of
/// radius `radius_m`, or `None` when its lane never intersects the disc.
pub fn coverage_interval(
    v: &Vehicle,
    geometry: &RoadGeometry,
    lanes: u32,
    radius_m: f64,
) -> Option<(f64, f64)> {
    let y = (v.lane as f64 - (lanes as f64 - 1.0) / 2.0) * geometry.lane_width_m;
    let half_chord_sq = radius_m * radius_m - y * y;
    if half_chord_sq < 0.0 {
        return None;
    }
    let half_chord = half_chord_sq.sqrt();
    let enter = v.entry_time_s + (geometry.approach_m - half_chord) / v.speed_mps;
    let exit = v.entry_time_s + (geometry.approach_m + half_chord) / v.speed_mps;
    Some((enter, exit))
}

/// Analytic mean in-coverage dwell per vehicle: the lane-average chord
/// length times the mean reciprocal speed. This is the oracle the
/// stochastic simulation is validated against.
pub fn mean_dwell_s(model: &TrafficModel, geometry: &RoadGeometry, radius_m: f64) -> f64 {
    let offsets = lane_offsets(model.lanes, geometry.lane_width_m);
    let mean_chord = offsets
        .iter()
        .map(|y| {
            let h = radius_m * radius_m - y * y;
            if h > 0.0 {
                2.0 * h.sqrt()
            } else {
                0.0
            }
        })
        .sum::<f64>()
        / model.lanes as f64;
    mean_chord * model.mean_inverse_speed()
}

/// Spawns every vehicle entering during `[0, duration_s]`.
///
/// Per lane, the first vehicle appears at t = 0 and successors follow at
/// cumulative clamped headways; a vehicle spawns as long as its entry time
/// does not exceed the duration (boundary inclusive). The result is sorted
/// by entry time (lane as tie-break) with ids assigned in that order.
pub fn spawn_stream(model: &TrafficModel, duration_s: f64, rng: &mut impl Rng) -> Vec<Vehicle> {
    let sample = |range: (f64, f64), rng: &mut dyn FnMut() -> f64| {
        let (lo, hi) = range;
        if (hi - lo).abs() < 1e-12 {
            lo
        } else {
            lo + (hi - lo) * rng()
        }
    };
    let mut vehicles = Vec::new();
    for lane in 0..model.lanes {
        let mut t = 0.0;
        while t <= duration_s {
            let mut draw = || rng.gen::<f64>();
            let speed = sample(model.speed_range_mps, &mut draw);
            vehicles.push(Vehicle {
                id: 0, // assigned after sorting
                lane,
                speed_mps: speed,
                entry_time_s: t,
            });
            let headway = sample(model.headway_range_s, &mut draw).max(MIN_HEADWAY_S);
            t += headway;
        }
    }
    vehicles.sort_by(|a, b| {
        a.entry_time_s
            .total_cmp(&b.entry_time_s)
            .then(a.lane.cmp(&b.lane))
    });
    for (i, v) in vehicles.iter_mut().enumerate() {
        v.id = i as u64;
    }
    vehicles
}
