//! Guard election and the per-window speed hypothesis test.
//!
//! The guard is the vehicle nearest the centroid of all positions. Once per
//! detection window it takes the latest beacon from every sender it heard,
//! computes mean speed and density plus the population standard deviation of
//! speed, and rejects every sender whose reported speed falls outside
//! `[s_avg - k*sigma, s_avg + k*sigma]`.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use thiserror::Error;

use crate::model::{
    BeaconMessage, ConfusionCounts, Decision, DetectionReport, Position, VehicleId, VehicleState,
};

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum DetectionError {
    #[error("empty input")]
    EmptyInput,
    #[error("at least two vehicles are required, got {got}")]
    InsufficientVehicles { got: usize },
}

/// Hypothesis-test outcome: 0 keeps the null hypothesis (honest), 1 rejects it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[repr(u8)]
pub enum Rlt {
    Accept = 0,
    Reject = 1,
}

impl From<Rlt> for Decision {
    fn from(r: Rlt) -> Decision {
        match r {
            Rlt::Accept => Decision::Accepted,
            Rlt::Reject => Decision::Rejected,
        }
    }
}

/// Component-wise mean of the positions.
pub fn centroid(positions: &[Position]) -> Result<Position, DetectionError> {
    if positions.is_empty() {
        return Err(DetectionError::EmptyInput);
    }
    let n = positions.len() as f64;
    let (sx, sy) = positions
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
    Ok(Position::new(sx / n, sy / n))
}

/// Guard over arbitrary `(id, position)` pairs; ties go to the smallest id.
pub fn elect_guard_among<I>(vehicles: I) -> Result<VehicleId, DetectionError>
where
    I: IntoIterator<Item = (VehicleId, Position)>,
{
    let vehicles: Vec<(VehicleId, Position)> = vehicles.into_iter().collect();
    if vehicles.len() < 2 {
        return Err(DetectionError::InsufficientVehicles {
            got: vehicles.len(),
        });
    }
    let positions: Vec<Position> = vehicles.iter().map(|(_, p)| *p).collect();
    let center = centroid(&positions)?;
    let (id, _) = vehicles
        .iter()
        .map(|(id, p)| (*id, center.distance(p)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .expect("non-empty");
    Ok(id)
}

pub fn elect_guard(states: &[VehicleState]) -> Result<VehicleId, DetectionError> {
    elect_guard_among(states.iter().map(|s| (s.id, s.pos)))
}

/// Latest beacon per sender received by one guard during one window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub guard: VehicleId,
    pub window_index: u64,
    beacons: BTreeMap<VehicleId, BeaconMessage>,
}

impl WindowSample {
    pub fn new(guard: VehicleId, window_index: u64) -> Self {
        WindowSample {
            guard,
            window_index,
            beacons: BTreeMap::new(),
        }
    }

    /// Keeps the most recent beacon per sender. The guard's own beacons are dropped.
    pub fn record(&mut self, beacon: BeaconMessage) {
        if beacon.sender == self.guard {
            return;
        }
        match self.beacons.get(&beacon.sender) {
            Some(prev) if prev.t_ms > beacon.t_ms => {}
            _ => {
                self.beacons.insert(beacon.sender, beacon);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.beacons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beacons.is_empty()
    }

    pub fn beacons(&self) -> impl Iterator<Item = &BeaconMessage> {
        self.beacons.values()
    }
}

impl FromIterator<BeaconMessage> for WindowSample {
    /// Collects with guard `u32::MAX` and window 0; use [`WindowSample::new`] otherwise.
    fn from_iter<T: IntoIterator<Item = BeaconMessage>>(iter: T) -> Self {
        let mut s = WindowSample::new(VehicleId(u32::MAX), 0);
        for b in iter {
            s.record(b);
        }
        s
    }
}

/// Mean reported speed and mean carried density over all senders.
pub fn window_averages(sample: &WindowSample) -> Result<(f64, f64), DetectionError> {
    if sample.is_empty() {
        return Err(DetectionError::EmptyInput);
    }
    let n = sample.len() as f64;
    let (speed, density) = sample.beacons().fold((0.0, 0.0), |(s, d), b| {
        (s + b.reported_speed, d + b.density)
    });
    Ok((speed / n, density / n))
}

/// Population standard deviation of reported speed about `s_avg`, floored at `sigma_floor`.
pub fn std_dev(sample: &WindowSample, s_avg: f64, sigma_floor: f64) -> Result<f64, DetectionError> {
    if sample.is_empty() {
        return Err(DetectionError::EmptyInput);
    }
    let n = sample.len() as f64;
    let ss: f64 = sample
        .beacons()
        .map(|b| {
            let d = s_avg - b.reported_speed;
            d * d
        })
        .sum();
    Ok((ss / n).sqrt().max(sigma_floor))
}

/// Accepts iff `|reported - s_avg| <= k * sigma` (closed interval).
#[inline]
pub fn classify(reported: f64, s_avg: f64, sigma: f64, k: f64) -> Rlt {
    debug_assert!(sigma > 0.0);
    if (reported - s_avg).abs() <= k * sigma {
        Rlt::Accept
    } else {
        Rlt::Reject
    }
}

/// One full detection pass over a window sample.
pub fn detect_window(
    sample: &WindowSample,
    k: f64,
    sigma_floor: f64,
) -> Result<DetectionReport, DetectionError> {
    let started = Instant::now();
    if sample.len() < 2 {
        return Err(DetectionError::InsufficientVehicles { got: sample.len() });
    }
    // One pass over the map into a flat buffer; everything after reads the buffer.
    let rows: Vec<(VehicleId, f64, f64)> = sample
        .beacons()
        .map(|b| (b.sender, b.reported_speed, b.density))
        .collect();
    let n = rows.len() as f64;
    let (speed_sum, density_sum) = rows
        .iter()
        .fold((0.0, 0.0), |(s, d), &(_, v, rho)| (s + v, d + rho));
    let (s_avg, rho_avg) = (speed_sum / n, density_sum / n);
    let ss: f64 = rows
        .iter()
        .map(|&(_, v, _)| {
            let d = s_avg - v;
            d * d
        })
        .sum();
    let sigma = (ss / n).sqrt().max(sigma_floor);

    let mut rogue_ids = Vec::new();
    // rows are in id order, so the map is bulk-built
    let decisions: BTreeMap<VehicleId, Decision> = rows
        .iter()
        .map(|&(id, v, _)| {
            let rlt = classify(v, s_avg, sigma, k);
            if rlt == Rlt::Reject {
                rogue_ids.push(id);
            }
            (id, Decision::from(rlt))
        })
        .collect();

    Ok(DetectionReport {
        window_index: sample.window_index,
        guard: sample.guard,
        s_avg,
        rho_avg,
        sigma,
        decisions,
        rogue_ids,
        processing_time_us: started.elapsed().as_secs_f64() * 1e6,
    })
}

/// Which vehicles of a run are truly rogue.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroundTruth {
    pub n_vehicles: u32,
    pub rogues: BTreeSet<VehicleId>,
}

impl GroundTruth {
    pub fn from_states(states: &[VehicleState]) -> Self {
        GroundTruth {
            n_vehicles: states.len() as u32,
            rogues: states.iter().filter(|s| s.is_rogue).map(|s| s.id).collect(),
        }
    }
}

/// Per-run confusion counts. A vehicle is flagged if any report rejected it.
/// Vehicles that served as guard in any report are not scored.
pub fn score(reports: &[DetectionReport], truth: &GroundTruth) -> ConfusionCounts {
    let guards: BTreeSet<VehicleId> = reports.iter().map(|r| r.guard).collect();
    let flagged: BTreeSet<VehicleId> = reports
        .iter()
        .flat_map(|r| r.rogue_ids.iter().copied())
        .collect();
    let mut c = ConfusionCounts::default();
    for id in (0..truth.n_vehicles).map(VehicleId) {
        if guards.contains(&id) {
            continue;
        }
        match (truth.rogues.contains(&id), flagged.contains(&id)) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}
