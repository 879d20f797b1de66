//! Ground-truth vehicle motion on a straight multi-lane ring road.
//!
//! Mean speed follows the Greenshield relation between speed and physical road
//! density. Each step every vehicle redraws its speed around that mean, and a
//! trailing vehicle closer than [`FOLLOW_GAP_M`] to its leader takes the leader's
//! speed. Positions wrap at the road end so density stays constant for a run.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::detection::elect_guard_among;
use crate::model::{
    mph_to_mps, Position, ReportPolicy, ValidatedConfig, VehicleId, VehicleState, LANE_WIDTH_M,
};
use crate::rng::{self, Purpose, StreamRng};

/// Trailing distance under which a vehicle copies its leader's speed.
pub const FOLLOW_GAP_M: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MobilityError {
    #[error("time step must be positive")]
    ZeroStep,
    #[error("traffic parameters must be positive and finite (s_max={s_max}, rho_max={rho_max})")]
    InvalidTraffic { s_max: f64, rho_max: f64 },
    #[error("{got} speed streams supplied for {expected} vehicles")]
    StreamMismatch { expected: usize, got: usize },
}

/// Greenshield parameters: free-flow speed (mph) and jam density (vehicles/mile/lane).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficParams {
    pub s_max: f64,
    pub rho_max: f64,
}

impl TrafficParams {
    pub fn new(s_max: f64, rho_max: f64) -> Result<Self, MobilityError> {
        if s_max.is_finite() && rho_max.is_finite() && s_max > 0.0 && rho_max > 0.0 {
            Ok(TrafficParams { s_max, rho_max })
        } else {
            Err(MobilityError::InvalidTraffic { s_max, rho_max })
        }
    }
}

/// Speed at physical density `rho`, clamped at zero beyond jam density.
pub fn greenshield_speed(rho: f64, params: &TrafficParams) -> f64 {
    (params.s_max - (rho / params.rho_max) * params.s_max).max(0.0)
}

/// Beacon-message density: beacons per vehicle times vehicle count.
pub fn beacon_density(n_vehicles: u64, beacons_per_vehicle_per_window: u64) -> f64 {
    (beacons_per_vehicle_per_window as f64) * (n_vehicles as f64)
}

/// Physical density in vehicles per mile per lane.
pub fn road_density(n_in_region: u64, region_length_mi: f64, lanes: u32) -> f64 {
    n_in_region as f64 / (region_length_mi * f64::from(lanes))
}

/// Road geometry and the speed distribution vehicles draw from.
#[derive(Debug, Clone)]
pub struct Road {
    pub length_m: f64,
    pub lanes: u32,
    pub traffic: TrafficParams,
    pub speed_min: f64,
    pub speed_max: f64,
    pub noise: Option<Normal<f64>>,
    /// Greenshield mean speed for the scenario's density, mph.
    pub mean_speed: f64,
}

impl Road {
    pub fn from_config(cfg: &ValidatedConfig) -> Road {
        let traffic = TrafficParams {
            s_max: cfg.speed_max,
            rho_max: cfg.jam_density,
        };
        let rho = road_density(u64::from(cfg.n_vehicles), cfg.road_length, cfg.lanes);
        let noise = (cfg.honest_noise_sigma > 0.0)
            .then(|| Normal::new(0.0, cfg.honest_noise_sigma).expect("validated sigma"));
        Road {
            length_m: cfg.road_length_m(),
            lanes: cfg.lanes,
            traffic,
            speed_min: cfg.speed_min,
            speed_max: cfg.speed_max,
            noise,
            mean_speed: greenshield_speed(rho, &traffic),
        }
    }

    pub fn sample_speed<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let noise = self.noise.map_or(0.0, |n| n.sample(rng));
        (self.mean_speed + noise).clamp(self.speed_min, self.speed_max)
    }
}

/// Per-vehicle speed streams for [`spawn`] and [`step`].
pub fn speed_streams(cfg: &ValidatedConfig) -> Vec<StreamRng> {
    rng::per_vehicle(cfg.seed, Purpose::Speed, cfg.n_vehicles as usize)
}

/// Places `n_vehicles` uniformly over the road and lanes and flags the rogue subset.
///
/// The vehicle nearest the initial centroid is never chosen as a rogue.
pub fn spawn(cfg: &ValidatedConfig, speed_rngs: &mut [StreamRng]) -> Vec<VehicleState> {
    let n = cfg.n_vehicles as usize;
    assert_eq!(speed_rngs.len(), n, "one speed stream per vehicle");
    let road = Road::from_config(cfg);

    let mut states: Vec<VehicleState> = (0..n)
        .map(|i| {
            let mut place = rng::stream(cfg.seed, Purpose::Placement, i as u64);
            let x = place.random_range(0.0..road.length_m);
            let lane = place.random_range(0..road.lanes);
            VehicleState {
                id: VehicleId(i as u32),
                pos: Position::new(x, f64::from(lane) * LANE_WIDTH_M),
                true_speed: road.sample_speed(&mut speed_rngs[i]),
                accel: 0.0,
                lane,
                is_rogue: false,
                policy: ReportPolicy::Honest,
            }
        })
        .collect();

    let k = cfg.rogue_count() as usize;
    if k > 0 {
        let guard = elect_guard_among(states.iter().map(|s| (s.id, s.pos)))
            .expect("validated config has at least two vehicles");
        let mut pick = rng::stream(cfg.seed, Purpose::RogueSelection, 0);
        let mut chosen: Vec<usize> = index::sample(&mut pick, n - 1, k)
            .into_iter()
            .map(|j| if j >= guard.index() { j + 1 } else { j })
            .collect();
        chosen.sort_unstable();
        for i in chosen {
            states[i].is_rogue = true;
            states[i].policy = cfg.rogue_policy;
        }
    }
    states
}

/// Index of each vehicle's leader in its lane (next vehicle ahead on the ring)
/// and the gap to it. A vehicle alone in its lane has no leader and a gap of
/// one full road length.
pub fn leaders(states: &[VehicleState], road_length_m: f64) -> Vec<(Option<usize>, f64)> {
    let mut out = vec![(None, road_length_m); states.len()];
    let mut by_lane: Vec<Vec<usize>> = Vec::new();
    for (i, s) in states.iter().enumerate() {
        let lane = s.lane as usize;
        if by_lane.len() <= lane {
            by_lane.resize_with(lane + 1, Vec::new);
        }
        by_lane[lane].push(i);
    }
    for lane in &mut by_lane {
        if lane.len() < 2 {
            continue;
        }
        lane.sort_by(|&a, &b| {
            states[a]
                .pos
                .x
                .total_cmp(&states[b].pos.x)
                .then(states[a].id.cmp(&states[b].id))
        });
        for (j, &i) in lane.iter().enumerate() {
            let lead = lane[(j + 1) % lane.len()];
            let gap = (states[lead].pos.x - states[i].pos.x).rem_euclid(road_length_m);
            out[i] = (Some(lead), gap);
        }
    }
    out
}

/// Advances every vehicle by `dt_ms`, then redraws speeds and applies car-following.
pub fn step(
    states: &mut [VehicleState],
    dt_ms: u64,
    road: &Road,
    speed_rngs: &mut [StreamRng],
) -> Result<(), MobilityError> {
    if dt_ms == 0 {
        return Err(MobilityError::ZeroStep);
    }
    if speed_rngs.len() != states.len() {
        return Err(MobilityError::StreamMismatch {
            expected: states.len(),
            got: speed_rngs.len(),
        });
    }
    let dt_s = dt_ms as f64 / 1000.0;
    for s in states.iter_mut() {
        s.pos.x = (s.pos.x + mph_to_mps(s.true_speed) * dt_s).rem_euclid(road.length_m);
    }

    let sampled: Vec<f64> = speed_rngs
        .iter_mut()
        .map(|r| road.sample_speed(r))
        .collect();
    let lead = leaders(states, road.length_m);
    for (i, s) in states.iter_mut().enumerate() {
        let next = match lead[i] {
            (Some(l), gap) if gap <= FOLLOW_GAP_M => sampled[l],
            _ => sampled[i],
        };
        s.accel = (next - s.true_speed) / dt_s;
        s.true_speed = next;
    }
    Ok(())
}

/// Speed a vehicle puts in its beacon at `t_ms` since run start.
pub fn reported_speed(state: &VehicleState, t_ms: u64) -> f64 {
    match state.policy {
        ReportPolicy::Honest => state.true_speed,
        ReportPolicy::SuddenDrop { target_mph } => target_mph,
        ReportPolicy::GradualDrop { rate_mph_per_s } => {
            (state.true_speed - rate_mph_per_s * t_ms as f64 / 1000.0).max(0.0)
        }
    }
}
